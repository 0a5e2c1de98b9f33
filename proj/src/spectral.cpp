#include "carthresh/spectral.hpp"

#include <cmath>
#include <string>

#include "carthresh/error.hpp"

namespace carthresh {

namespace {

constexpr double kZeroEigenTol = 1e-9;
constexpr double kSignTol = 1e-12;

void check_rho(double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw DomainError("rho must lie in [0, 1), got " + std::to_string(rho));
  }
}

}  // namespace

CovarianceSpec CovarianceSpec::make(double sigma2, double tau2, double rho) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw DomainError("sigma2 must be positive");
  if (!(tau2 > 0.0) || !std::isfinite(tau2)) throw DomainError("tau2 must be positive");
  check_rho(rho);
  return CovarianceSpec{sigma2, tau2, rho};
}

SpectralLaplacian decompose(const Laplacian& lap) {
  if (lap.n == 0) throw DomainError("cannot decompose an empty Laplacian");
  if (lap.n > kMaxSpectralUnits) {
    throw DomainError("dense eigendecomposition is limited to " +
                      std::to_string(kMaxSpectralUnits) + " units, got " + std::to_string(lap.n));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap.entries);
  if (solver.info() != Eigen::Success) throw NumericError("Laplacian eigensolver did not converge");

  SpectralLaplacian out{solver.eigenvalues(), solver.eigenvectors()};
  if (std::abs(out.eigvals[0]) <= kZeroEigenTol) out.eigvals[0] = 0.0;
  if (out.eigvals.size() > 1 && out.eigvals[1] <= kZeroEigenTol) {
    throw NotConnectedError("graph is not connected (second Laplacian eigenvalue " +
                            std::to_string(out.eigvals[1]) + ")");
  }
  for (Eigen::Index k = 0; k < out.eigvecs.cols(); ++k) {
    auto col = out.eigvecs.col(k);
    for (Eigen::Index r = 0; r < col.size(); ++r) {
      if (std::abs(col[r]) > kSignTol) {
        if (col[r] < 0.0) col = -col;
        break;
      }
    }
  }
  return out;
}

Eigen::VectorXd q_eigenvalues(const SpectralLaplacian& spec, double rho) {
  check_rho(rho);
  return (rho * spec.eigvals.array() + (1.0 - rho)).matrix();
}

double log_det_q(const SpectralLaplacian& spec, double rho) {
  return q_eigenvalues(spec, rho).array().log().sum();
}

double theta_quadform(const SpectralLaplacian& spec, double rho, const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != spec.size()) {
    throw ShapeError("theta has length " + std::to_string(theta.size()) + ", expected " +
                     std::to_string(spec.size()));
  }
  const Eigen::VectorXd alpha = spec.eigvecs.transpose() * theta;
  return (q_eigenvalues(spec, rho).array() * alpha.array().square()).sum();
}

Eigen::VectorXd omega_inverse_action(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                                     std::size_t m, const Eigen::VectorXd& v,
                                     std::span<const std::size_t> membership) {
  const std::size_t n = spec.size();
  if (membership.size() != static_cast<std::size_t>(v.size())) {
    throw ShapeError("membership and vector lengths differ");
  }
  if (static_cast<std::size_t>(v.size()) != n * m) {
    throw ShapeError("vector length " + std::to_string(v.size()) + " is not n * m = " +
                     std::to_string(n * m));
  }
  std::vector<std::size_t> counts(n, 0);
  Eigen::VectorXd area_sums = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < membership.size(); ++r) {
    const std::size_t a = membership[r];
    if (a >= n) throw RangeError("membership index outside the map");
    ++counts[a];
    area_sums[static_cast<Eigen::Index>(a)] += v[static_cast<Eigen::Index>(r)];
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (counts[a] != m) {
      throw BalanceError("area " + std::to_string(a + 1) + " has " + std::to_string(counts[a]) +
                         " rows; the Woodbury form needs exactly m = " + std::to_string(m));
    }
  }

  const double md = static_cast<double>(m);
  const Eigen::VectorXd q = q_eigenvalues(spec, cov.rho);
  const Eigen::VectorXd alpha = spec.eigvecs.transpose() * area_sums;
  const Eigen::VectorXd scaled = (alpha.array() / (cov.sigma2 * q.array() + md * cov.tau2)).matrix();
  const Eigen::VectorXd area_correction = spec.eigvecs * scaled;

  Eigen::VectorXd out = v / cov.sigma2;
  const double factor = cov.tau2 / cov.sigma2;
  for (std::size_t r = 0; r < membership.size(); ++r) {
    out[static_cast<Eigen::Index>(r)] -=
        factor * area_correction[static_cast<Eigen::Index>(membership[r])];
  }
  return out;
}

}  // namespace carthresh
