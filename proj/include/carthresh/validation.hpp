#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "carthresh/graph.hpp"
#include "carthresh/spectral.hpp"

namespace carthresh {

// Dense reference computations. These form Q(rho) and Omega explicitly from
// the Laplacian and never touch the eigendecomposition, so they can check
// the closed-form routines independently.

/// tau2 Z Q(rho)^{-1} Z' + sigma2 I for an area-major balanced design.
Eigen::MatrixXd dense_omega(const Laplacian& lap, const CovarianceSpec& cov, std::size_t m);

/// x' Omega^{-1} x with Omega formed densely.
double dense_slope_precision(const Laplacian& lap, const CovarianceSpec& cov, std::size_t m,
                             const Eigen::VectorXd& x);

/// Closed-form precision under test: (spec, cov, n, m, d) -> precision.
using PrecisionFormula = std::function<double(const SpectralLaplacian&, const CovarianceSpec&,
                                              std::size_t, std::size_t, const Eigen::VectorXd&)>;

struct ValidationCase {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  double rho = 0.0;
  double kappa = 0.0;
  double rel_error_spatial = 0.0;
  double rel_error_nonspatial = 0.0;

  double max_error() const noexcept;
};

struct ValidationReport {
  std::vector<ValidationCase> cases;
  double max_rel_error = 0.0;
  std::size_t worst = 0;  ///< index into `cases`

  bool passed(double tolerance = 1e-8) const noexcept { return max_rel_error <= tolerance; }
};

/// Random instances with n in [2, 10], m in [1, 5], rho in {0, .3, .7, .95},
/// kappa in {.05/.95, 1, 19} (tau2 + sigma2 = 1) on random connected maps
/// with standardized C1/C2/C3 covariates. The spatial and nonspatial
/// formulas default to the library's.
ValidationReport run_validation(std::uint64_t seed, std::size_t cases,
                                PrecisionFormula spatial = {}, PrecisionFormula nonspatial = {});

}  // namespace carthresh
