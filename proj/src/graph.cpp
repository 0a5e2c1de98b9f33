#include "carthresh/graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "carthresh/error.hpp"
#include "carthresh/rng.hpp"

namespace carthresh {

AreaGraph::AreaGraph(std::size_t n, const std::vector<Edge>& edges) : n_(n), neighbors_(n) {
  edges_.reserve(edges.size());
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) {
      throw RangeError("edge (" + std::to_string(a + 1) + ", " + std::to_string(b + 1) +
                       ") references a unit outside [1, " + std::to_string(n) + "]");
    }
    if (a == b) throw ValidationError("self-loop at unit " + std::to_string(a + 1));
    edges_.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  for (auto [a, b] : edges_) {
    neighbors_[a].push_back(b);
    neighbors_[b].push_back(a);
  }
  for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
}

std::vector<std::size_t> AreaGraph::degrees() const {
  std::vector<std::size_t> out(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = neighbors_[i].size();
  return out;
}

bool AreaGraph::adjacent(std::size_t i, std::size_t j) const {
  const auto& nb = neighbors_.at(i);
  return std::binary_search(nb.begin(), nb.end(), j);
}

double AreaGraph::mean_degree() const {
  if (n_ == 0) return 0.0;
  return 2.0 * static_cast<double>(edges_.size()) / static_cast<double>(n_);
}

double AreaGraph::laplacian_quadform(const Eigen::VectorXd& v) const {
  double s = 0.0;
  for (auto [a, b] : edges_) {
    const double d = v[static_cast<Eigen::Index>(a)] - v[static_cast<Eigen::Index>(b)];
    s += d * d;
  }
  return s;
}

Laplacian build_laplacian(const AreaGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Laplacian lap{g.size(), Eigen::MatrixXd::Zero(n, n)};
  for (auto [a, b] : g.edges()) {
    const auto i = static_cast<Eigen::Index>(a);
    const auto j = static_cast<Eigen::Index>(b);
    lap.entries(i, j) = -1.0;
    lap.entries(j, i) = -1.0;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    lap.entries(k, k) = static_cast<double>(g.degree(i));
  }
  return lap;
}

bool is_connected(const AreaGraph& g) {
  const std::size_t n = g.size();
  if (n <= 1) return true;
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (std::size_t v : g.neighbors(u)) {
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        stack.push_back(v);
      }
    }
  }
  return reached == n;
}

AreaGraph generate_random_connected(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("generate_random_connected: n must be >= 1");
  Rng rng(derive_seed(seed, {0x6772617068ULL}));
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  // Wilson's algorithm on K_n. A walk step from u moves to a uniformly chosen
  // unit other than u. `next` records the last exit taken from each unit, so
  // following it from the walk start traces the loop-erased path.
  std::vector<char> in_tree(n, 0);
  std::vector<std::size_t> next(n, kNone);
  const auto root = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
  in_tree[root] = 1;

  std::vector<AreaGraph::Edge> edges;
  edges.reserve(n - 1);
  for (std::size_t start = 0; start < n; ++start) {
    std::size_t u = start;
    while (!in_tree[u]) {
      auto v = static_cast<std::size_t>(rng.uniform_int(0, n - 2));
      if (v >= u) ++v;
      next[u] = v;
      u = v;
    }
    for (u = start; !in_tree[u]; u = next[u]) {
      in_tree[u] = 1;
      edges.emplace_back(u, next[u]);
    }
  }
  return AreaGraph(n, edges);
}

AreaGraph generate_grid_queen(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw DomainError("generate_grid_queen: rows and cols must be >= 1");
  std::vector<AreaGraph::Edge> edges;
  const auto index = [cols](std::size_t r, std::size_t c) { return r * cols + c; };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      // Forward half of the 8-neighbourhood; the rest arrives by symmetry.
      if (c + 1 < cols) edges.emplace_back(index(r, c), index(r, c + 1));
      if (r + 1 < rows) {
        edges.emplace_back(index(r, c), index(r + 1, c));
        if (c + 1 < cols) edges.emplace_back(index(r, c), index(r + 1, c + 1));
        if (c > 0) edges.emplace_back(index(r, c), index(r + 1, c - 1));
      }
    }
  }
  return AreaGraph(rows * cols, edges);
}

namespace {

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

AreaGraph read_adjacency(std::istream& in) {
  std::string raw;
  std::size_t line_no = 0;
  long long n = -1;
  std::vector<AreaGraph::Edge> edges;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip_comment(raw);
    if (blank(line)) continue;
    std::istringstream ls(line);
    if (n < 0) {
      std::string key;
      std::string extra;
      if (!(ls >> key >> n) || key != "n" || (ls >> extra)) {
        throw ParseError("expected header 'n <count>'", line_no);
      }
      if (n < 0) throw ParseError("unit count must be nonnegative", line_no);
      continue;
    }
    long long a = 0;
    long long b = 0;
    std::string extra;
    if (!(ls >> a >> b) || (ls >> extra)) throw ParseError("expected 'i j' unit pair", line_no);
    if (a < 1 || b < 1 || a > n || b > n) {
      throw RangeError("line " + std::to_string(line_no) + ": unit index outside [1, " +
                       std::to_string(n) + "]");
    }
    if (a == b) {
      throw ValidationError("line " + std::to_string(line_no) + ": self-loop at unit " +
                            std::to_string(a));
    }
    edges.emplace_back(static_cast<std::size_t>(a - 1), static_cast<std::size_t>(b - 1));
  }
  if (n < 0) throw ParseError("missing header 'n <count>'", line_no);
  return AreaGraph(static_cast<std::size_t>(n), edges);
}

AreaGraph read_adjacency_string(const std::string& text) {
  std::istringstream in(text);
  return read_adjacency(in);
}

AreaGraph read_adjacency_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open adjacency file '" + path + "'");
  return read_adjacency(in);
}

void write_adjacency(std::ostream& out, const AreaGraph& g) {
  out << "n " << g.size() << '\n';
  for (auto [a, b] : g.edges()) out << a + 1 << ' ' << b + 1 << '\n';
}

void write_adjacency_file(const std::string& path, const AreaGraph& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write adjacency file '" + path + "'");
  write_adjacency(out, g);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace carthresh
