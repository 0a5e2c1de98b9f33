#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace carthresh {

/// Binary, undirected adjacency over `n` areal units.
///
/// Units are 0-based in memory and 1-based in text formats. Edges are stored
/// once with `first < second`, sorted; neighbor lists are derived and sorted.
/// Instances are immutable after construction.
class AreaGraph {
 public:
  using Edge = std::pair<std::size_t, std::size_t>;

  AreaGraph() = default;

  /// Builds from 0-based pairs. Duplicates and reversed duplicates collapse.
  /// Throws RangeError for an index >= n and ValidationError for a self-loop.
  AreaGraph(std::size_t n, const std::vector<Edge>& edges);

  std::size_t size() const noexcept { return n_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  std::size_t degree(std::size_t i) const { return neighbors_.at(i).size(); }
  std::vector<std::size_t> degrees() const;
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_.at(i); }
  bool adjacent(std::size_t i, std::size_t j) const;

  /// Mean of the degree sequence, 2|E|/n.
  double mean_degree() const;

  /// Sum over edges of (v_i - v_j)^2, i.e. v' L v.
  double laplacian_quadform(const Eigen::VectorXd& v) const;

  friend bool operator==(const AreaGraph& a, const AreaGraph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

/// Dense L = D - W. Entries are small integers, so row sums are exact.
struct Laplacian {
  std::size_t n = 0;
  Eigen::MatrixXd entries;
};

Laplacian build_laplacian(const AreaGraph& g);

/// Traversal-based; the empty graph and a single unit count as connected.
bool is_connected(const AreaGraph& g);

/// Uniform spanning tree of the complete graph on n units (Wilson's
/// loop-erased random walk). Always connected with exactly n - 1 edges.
AreaGraph generate_random_connected(std::size_t n, std::uint64_t seed);

/// Lattice with 8-neighbourhood (shared border or vertex). Unit (r, c) has
/// index r * cols + c.
AreaGraph generate_grid_queen(std::size_t rows, std::size_t cols);

/// Parses the edge-list format: a header `n <N>` then `i j` pairs, 1-based,
/// `#` comments and blank lines ignored.
AreaGraph read_adjacency(std::istream& in);
AreaGraph read_adjacency_string(const std::string& text);
AreaGraph read_adjacency_file(const std::string& path);

void write_adjacency(std::ostream& out, const AreaGraph& g);
void write_adjacency_file(const std::string& path, const AreaGraph& g);

}  // namespace carthresh
