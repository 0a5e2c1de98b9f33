#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "carthresh/graph.hpp"

namespace carthresh {

/// Largest map the dense eigensolver accepts.
inline constexpr std::size_t kMaxSpectralUnits = 2000;

/// L = U diag(lambda) U'. Eigenvalues ascending; the smallest is clamped to
/// exactly 0 when within 1e-9 of it. Each eigenvector column is signed so its
/// first entry with |u| > 1e-12 is positive.
struct SpectralLaplacian {
  Eigen::VectorXd eigvals;
  Eigen::MatrixXd eigvecs;

  std::size_t size() const noexcept { return static_cast<std::size_t>(eigvals.size()); }
};

/// Observation and spatial variances plus the Leroux mixing weight.
/// Construct through `make` to get validation; kappa = tau2 / sigma2.
struct CovarianceSpec {
  double sigma2 = 1.0;
  double tau2 = 1.0;
  double rho = 0.0;

  /// Throws DomainError unless sigma2 > 0, tau2 > 0 and 0 <= rho < 1.
  static CovarianceSpec make(double sigma2, double tau2, double rho);
  double kappa() const noexcept { return tau2 / sigma2; }
};

/// Throws NotConnectedError when lambda_2 <= 1e-9, DomainError above
/// kMaxSpectralUnits, NumericError if the eigensolver fails.
SpectralLaplacian decompose(const Laplacian& lap);

/// rho * lambda_i + 1 - rho for each i. Throws DomainError for rho outside [0, 1).
Eigen::VectorXd q_eigenvalues(const SpectralLaplacian& spec, double rho);

/// log |Q(rho)| as a sum of logs of q_eigenvalues.
double log_det_q(const SpectralLaplacian& spec, double rho);

/// theta' Q(rho) theta through alpha = U' theta.
double theta_quadform(const SpectralLaplacian& spec, double rho, const Eigen::VectorXd& theta);

/// Omega^{-1} v for Omega = tau2 Z Q(rho)^{-1} Z' + sigma2 I on a balanced
/// design with `m` rows per area, using area sums only (nothing nm x nm is
/// formed). `membership[r]` is the 0-based area of row r. Throws BalanceError
/// if any area does not have exactly m rows, ShapeError on length mismatch.
Eigen::VectorXd omega_inverse_action(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                                     std::size_t m, const Eigen::VectorXd& v,
                                     std::span<const std::size_t> membership);

}  // namespace carthresh
