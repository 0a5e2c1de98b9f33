#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "carthresh/graph.hpp"
#include "carthresh/spectral.hpp"

namespace carthresh {

/// Individual-level outcomes nested in areas.
///
/// Row r has outcome y[r], covariates x.row(r) and 0-based area
/// membership[r]. Column 0 of x is the covariate of interest. Areas may hold
/// different numbers of rows (including zero); `balanced()` reports whether
/// every area holds the same positive count.
class MultilevelDataset {
 public:
  MultilevelDataset() = default;

  /// Throws ShapeError on inconsistent lengths, RangeError when a membership
  /// index is >= n_areas.
  MultilevelDataset(std::size_t n_areas, Eigen::VectorXd y, Eigen::MatrixXd x,
                    std::vector<std::size_t> membership,
                    std::vector<std::string> covariate_names = {}, bool standardized = false);

  std::size_t areas() const noexcept { return n_areas_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t covariates() const noexcept { return static_cast<std::size_t>(x_.cols()); }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::MatrixXd& x() const noexcept { return x_; }
  const std::vector<std::size_t>& membership() const noexcept { return membership_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }
  const std::vector<std::size_t>& area_counts() const noexcept { return counts_; }
  bool standardized() const noexcept { return standardized_; }

  bool balanced() const noexcept;
  /// Common per-area count when balanced.
  std::optional<std::size_t> replication() const noexcept;

 private:
  std::size_t n_areas_ = 0;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::vector<std::size_t> membership_;
  std::vector<std::string> names_;
  std::vector<std::size_t> counts_;
  bool standardized_ = false;
};

/// Generating values behind a simulated dataset.
struct TrueParams {
  double beta0 = 0.0;
  double beta1 = 0.0;
  CovarianceSpec cov;
  Eigen::VectorXd theta;
};

enum class CovariateStructure { C1, C2, C3 };

std::string_view to_string(CovariateStructure s) noexcept;
/// Accepts "C1", "C2", "C3" (case-insensitive). Throws ParseError otherwise.
CovariateStructure parse_structure(std::string_view text);

/// Centers each covariate column and scales it by its population standard
/// deviation over all rows, so that x'x equals the row count. Throws
/// DegenerateCovariateError for a constant column.
MultilevelDataset standardize(const MultilevelDataset& ds);

/// Per-area means of one covariate column. Areas without rows get 0.
Eigen::VectorXd area_means(const MultilevelDataset& ds, std::size_t column = 0);

/// Area-major membership for a balanced design: rows [i m, (i + 1) m) are area i.
std::vector<std::size_t> balanced_membership(std::size_t n, std::size_t m);

/// Raw covariate values in area-major order.
///   C1: iid N(0, 1).
///   C2: N(mu_i, 1) with mu_i iid N(0, 1).
///   C3: mu_i repeated m times.
Eigen::VectorXd gen_covariate(CovariateStructure structure, std::size_t n, std::size_t m,
                              std::uint64_t seed);

/// theta ~ N(0, tau2 Q(rho)^{-1}) drawn as U diag(tau / sqrt(q_i)) z.
Eigen::VectorXd draw_leroux_effects(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                                    std::uint64_t seed);

struct SimulatedDataset {
  MultilevelDataset data;
  TrueParams truth;
};

/// Forward simulation of Y = b0 + b1 x + theta_area + eps on a balanced
/// design. The covariate is left on its raw scale (`standardized() == false`).
/// `truth.theta` is ignored on input and filled with the realized effects.
/// Throws NotConnectedError for a disconnected graph, ShapeError when
/// n disagrees with the graph or spectrum.
SimulatedDataset simulate_dataset(const AreaGraph& g, const SpectralLaplacian& spec,
                                  const TrueParams& truth, CovariateStructure structure,
                                  std::size_t n, std::size_t m, std::uint64_t seed);

/// CSV with header `area,y,x` (or `area,y,<name>,...` for several
/// covariates); areas 1-based; values written with 17 significant digits.
/// When `n_areas` is given, indices above it are a RangeError; otherwise the
/// largest index seen sets the area count.
MultilevelDataset read_dataset_csv(std::istream& in, std::optional<std::size_t> n_areas = {});
MultilevelDataset read_dataset_csv_file(const std::string& path,
                                        std::optional<std::size_t> n_areas = {});
void write_dataset_csv(std::ostream& out, const MultilevelDataset& ds);
void write_dataset_csv_file(const std::string& path, const MultilevelDataset& ds);

}  // namespace carthresh
