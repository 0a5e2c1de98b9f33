#include "carthresh/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "carthresh/error.hpp"

namespace carthresh {

namespace {

constexpr double kInfiniteRelTol = 1e-8;
constexpr double kLeadingOrderTol = 1e-10;
constexpr std::int64_t kMinReplication = 2;

void check_lengths(std::size_t n, const Eigen::VectorXd& d) {
  if (static_cast<std::size_t>(d.size()) != n) {
    throw ShapeError("projection vector has length " + std::to_string(d.size()) + ", expected " +
                     std::to_string(n));
  }
}

double precision_from_q(const CovarianceSpec& cov, std::size_t n, std::size_t m,
                        const Eigen::VectorXd& d, const Eigen::VectorXd& q) {
  check_lengths(n, d);
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  double shrink = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) shrink += d[i] / (cov.sigma2 * q[i] + md * cov.tau2);
  const double precision = nd * md / cov.sigma2 - md * md * cov.tau2 / cov.sigma2 * shrink;
  if (!(precision > 0.0) || !std::isfinite(precision)) {
    throw NumericError("slope precision is not positive (" + std::to_string(precision) +
                       "); area means look inconsistent with a standardized covariate");
  }
  return precision;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

double SampleSizeThreshold::as_double() const noexcept {
  return is_infinite() ? std::numeric_limits<double>::infinity() : static_cast<double>(value_);
}

std::string SampleSizeThreshold::str() const {
  return is_infinite() ? std::string("INFINITE") : std::to_string(value_);
}

void write_report(std::ostream& out, const ThresholdReport& r) {
  out << "d = ";
  for (Eigen::Index i = 0; i < r.d.size(); ++i) out << (i ? "," : "") << fmt(r.d[i]);
  out << '\n';
  out << "d_dot = " << fmt(r.d_dot) << '\n';
  out << "numerator_sum = " << fmt(r.numerator_sum) << '\n';
  out << "m_star = " << r.m_star.str() << '\n';
  out << "gamma = " << fmt(r.gamma) << '\n';
  out << "rho = " << fmt(r.rho) << '\n';
  out << "kappa = " << fmt(r.kappa) << '\n';
}

Eigen::VectorXd projections(const SpectralLaplacian& spec, const Eigen::VectorXd& xbar) {
  check_lengths(spec.size(), xbar);
  return (spec.eigvecs.transpose() * xbar).array().square().matrix();
}

double precision_spatial(const SpectralLaplacian& spec, const CovarianceSpec& cov, std::size_t n,
                         std::size_t m, const Eigen::VectorXd& d) {
  if (spec.size() != n) throw ShapeError("n disagrees with the spectrum");
  return precision_from_q(cov, n, m, d, q_eigenvalues(spec, cov.rho));
}

double precision_nonspatial(const CovarianceSpec& cov, std::size_t n, std::size_t m,
                            const Eigen::VectorXd& d) {
  return precision_from_q(cov, n, m, d, Eigen::VectorXd::Ones(d.size()));
}

double relative_difference(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                           std::size_t n, std::size_t m, const Eigen::VectorXd& d) {
  const double spatial = precision_spatial(spec, cov, n, m, d);
  const double independent = precision_nonspatial(cov, n, m, d);
  return std::abs(independent - spatial) / spatial;
}

double leading_order_difference(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                                std::size_t n, std::size_t m, const Eigen::VectorXd& d) {
  check_lengths(spec.size(), d);
  if (spec.size() != n) throw ShapeError("n disagrees with the spectrum");
  const double nd = static_cast<double>(n);
  const double d_dot = d.sum();
  if (d_dot >= nd - kLeadingOrderTol) return std::numeric_limits<double>::infinity();
  const double numerator = (d.array() * (1.0 - spec.eigvals.array())).sum();
  return std::abs(cov.rho * cov.sigma2 * numerator) /
         (cov.tau2 * static_cast<double>(m) * (nd - d_dot));
}

ThresholdReport m_star(const SpectralLaplacian& spec, const CovarianceSpec& cov, double gamma,
                       const Eigen::VectorXd& xbar) {
  if (!(gamma > 0.0)) throw DomainError("tolerance gamma must be positive");
  ThresholdReport r;
  r.d = projections(spec, xbar);
  r.d_dot = r.d.sum();
  r.numerator_sum = (r.d.array() * (1.0 - spec.eigvals.array())).sum();
  r.gamma = gamma;
  r.rho = cov.rho;
  r.kappa = cov.kappa();

  const double nd = static_cast<double>(spec.size());
  const double between = nd - xbar.squaredNorm();
  if (between / nd <= kInfiniteRelTol) {
    r.m_star = SampleSizeThreshold::infinite();
    return r;
  }
  const double bound =
      std::abs(cov.sigma2 * cov.rho * r.numerator_sum) / (gamma * cov.tau2 * between);
  const double ceiled = std::ceil(bound);
  if (!std::isfinite(ceiled) || ceiled >= 9.0e18) {
    r.m_star = SampleSizeThreshold::infinite();
  } else {
    r.m_star = SampleSizeThreshold::finite(
        std::max<std::int64_t>(kMinReplication, static_cast<std::int64_t>(ceiled)));
  }
  return r;
}

std::string_view to_string(ReplicationVerdict v) noexcept {
  switch (v) {
    case ReplicationVerdict::sufficient:
      return "sufficient";
    case ReplicationVerdict::insufficient:
      return "insufficient";
    case ReplicationVerdict::spatial_required:
      return "spatial model required regardless";
  }
  return "?";
}

ReplicationVerdict assess_replication(const SampleSizeThreshold& threshold,
                                      std::span<const std::size_t> m_i) {
  if (m_i.empty()) throw DomainError("no per-area replication counts given");
  if (threshold.is_infinite()) return ReplicationVerdict::spatial_required;
  const std::size_t min_m = *std::min_element(m_i.begin(), m_i.end());
  return static_cast<std::int64_t>(min_m) >= threshold.value() ? ReplicationVerdict::sufficient
                                                                : ReplicationVerdict::insufficient;
}

UnbalancedAssessment conservative_m_star_unbalanced(const SpectralLaplacian& spec,
                                                    const CovarianceSpec& cov, double gamma,
                                                    const Eigen::VectorXd& xbar,
                                                    std::span<const std::size_t> m_i) {
  if (m_i.empty()) throw DomainError("no per-area replication counts given");
  if (std::any_of(m_i.begin(), m_i.end(), [](std::size_t c) { return c == 0; })) {
    throw DomainError("every area needs at least one observation");
  }
  UnbalancedAssessment out;
  out.report = m_star(spec, cov, gamma, xbar);
  out.min_m = *std::min_element(m_i.begin(), m_i.end());
  out.verdict = assess_replication(out.report.m_star, m_i);
  return out;
}

}  // namespace carthresh
