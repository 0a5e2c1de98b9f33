#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "carthresh/spectral.hpp"

namespace carthresh {

/// Within-area sample size beyond which the spatial and nonspatial models
/// give matching posterior variance for the slope, or infinite when no
/// finite replication suffices (covariate constant within every area).
class SampleSizeThreshold {
 public:
  static SampleSizeThreshold finite(std::int64_t m) { return SampleSizeThreshold(m); }
  static SampleSizeThreshold infinite() { return SampleSizeThreshold(-1); }

  bool is_infinite() const noexcept { return value_ < 0; }
  /// Only meaningful when finite.
  std::int64_t value() const noexcept { return value_; }
  /// +inf when infinite.
  double as_double() const noexcept;
  /// "INFINITE" or the integer.
  std::string str() const;

  friend bool operator==(SampleSizeThreshold, SampleSizeThreshold) = default;

 private:
  explicit SampleSizeThreshold(std::int64_t v) : value_(v) {}
  std::int64_t value_;
};

struct ThresholdReport {
  Eigen::VectorXd d;           ///< (u_i' xbar)^2
  double d_dot = 0.0;          ///< sum of d
  double numerator_sum = 0.0;  ///< sum of d_i (1 - lambda_i)
  SampleSizeThreshold m_star = SampleSizeThreshold::finite(2);
  double gamma = 0.0;
  double rho = 0.0;
  double kappa = 0.0;
};

/// Writes `key = value` lines in field order.
void write_report(std::ostream& out, const ThresholdReport& report);

/// d_i = (u_i' xbar)^2. Throws ShapeError on length mismatch.
Eigen::VectorXd projections(const SpectralLaplacian& spec, const Eigen::VectorXd& xbar);

/// Slope precision under the Leroux prior for a balanced design with a
/// standardized covariate:
///   nm / s2 - (m^2 t2 / s2) sum_i d_i / (s2 q_i + m t2),   q_i = rho lambda_i + 1 - rho.
/// Throws NumericError when the result is not positive.
double precision_spatial(const SpectralLaplacian& spec, const CovarianceSpec& cov, std::size_t n,
                         std::size_t m, const Eigen::VectorXd& d);

/// Same quantity with independent effects (every q_i = 1). Shares the
/// arithmetic of `precision_spatial`, so the two agree bit for bit at rho = 0.
double precision_nonspatial(const CovarianceSpec& cov, std::size_t n, std::size_t m,
                            const Eigen::VectorXd& d);

/// |prec(0) - prec(rho)| / prec(rho), evaluated exactly.
double relative_difference(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                           std::size_t n, std::size_t m, const Eigen::VectorXd& d);

/// First-order term of `relative_difference` in 1/m:
///   |rho s2 sum d_i (1 - lambda_i)| / (t2 m (n - d_dot)).
/// Returns +inf when d_dot >= n - 1e-10.
double leading_order_difference(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                                std::size_t n, std::size_t m, const Eigen::VectorXd& d);

/// max{2, ceil(|s2 rho sum d_i (1 - lambda_i)| / (gamma t2 (n - |xbar|^2)))},
/// infinite when (n - |xbar|^2) / n <= 1e-8. Throws DomainError for gamma <= 0.
ThresholdReport m_star(const SpectralLaplacian& spec, const CovarianceSpec& cov, double gamma,
                       const Eigen::VectorXd& xbar);

enum class ReplicationVerdict {
  sufficient,        ///< min m_i >= m*
  insufficient,      ///< min m_i < m*
  spatial_required,  ///< m* infinite
};

std::string_view to_string(ReplicationVerdict v) noexcept;

/// Applies a threshold conservatively to per-area replication (uses min m_i).
ReplicationVerdict assess_replication(const SampleSizeThreshold& threshold,
                                      std::span<const std::size_t> m_i);

struct UnbalancedAssessment {
  ThresholdReport report;
  std::size_t min_m = 0;
  ReplicationVerdict verdict = ReplicationVerdict::sufficient;
};

/// m* from `xbar` compared against the smallest per-area count. Throws
/// DomainError if any m_i is zero or the list is empty.
UnbalancedAssessment conservative_m_star_unbalanced(const SpectralLaplacian& spec,
                                                    const CovarianceSpec& cov, double gamma,
                                                    const Eigen::VectorXd& xbar,
                                                    std::span<const std::size_t> m_i);

}  // namespace carthresh
