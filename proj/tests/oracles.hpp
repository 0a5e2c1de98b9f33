#pragma once

// Reference computations for tests. Everything here works on dense matrices
// built straight from edge lists and never calls into the spectral or
// threshold code it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "carthresh/graph.hpp"

namespace oracle {

inline Eigen::MatrixXd adjacency(const carthresh::AreaGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [i, j] : g.edges()) {
    w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
    w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return w;
}

inline Eigen::MatrixXd laplacian(const carthresh::AreaGraph& g) {
  const Eigen::MatrixXd w = adjacency(g);
  Eigen::MatrixXd l = -w;
  l.diagonal() = w.rowwise().sum();
  return l;
}

inline Eigen::MatrixXd leroux_q(const carthresh::AreaGraph& g, double rho) {
  const auto n = static_cast<Eigen::Index>(g.size());
  return rho * laplacian(g) + (1.0 - rho) * Eigen::MatrixXd::Identity(n, n);
}

/// Area-major incidence for m rows per area.
inline Eigen::MatrixXd incidence(std::size_t n, std::size_t m) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n * m),
                                            static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      z(static_cast<Eigen::Index>(i * m + j), static_cast<Eigen::Index>(i)) = 1.0;
  return z;
}

inline Eigen::MatrixXd omega(const carthresh::AreaGraph& g, double sigma2, double tau2,
                             double rho, std::size_t m) {
  const Eigen::MatrixXd z = incidence(g.size(), m);
  const Eigen::MatrixXd qinv = leroux_q(g, rho).inverse();
  Eigen::MatrixXd om = tau2 * z * qinv * z.transpose();
  om.diagonal().array() += sigma2;
  return om;
}

/// x' Omega^{-1} x by a dense solve.
inline double slope_precision(const carthresh::AreaGraph& g, double sigma2, double tau2,
                              double rho, std::size_t m, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd om = omega(g, sigma2, tau2, rho, m);
  return x.dot(om.partialPivLu().solve(x));
}

struct Gls {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Posterior of beta under a flat prior with Omega known: N(GLS, (X'Om^-1 X)^-1).
inline Gls gls(const Eigen::MatrixXd& om, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const auto lu = om.partialPivLu();
  const Eigen::MatrixXd oix = lu.solve(x);
  const Eigen::MatrixXd info = x.transpose() * oix;
  Gls out;
  out.cov = info.inverse();
  out.mean = out.cov * (oix.transpose() * y);
  return out;
}

struct Conditional {
  double mean;
  double variance;
};

/// theta_i | theta_{-i}, data by conditioning the joint Gaussian posterior
/// of theta (prior N(0, tau2 Q^{-1}), residuals r ~ N(Z theta, sigma2 I))
/// through its covariance matrix.
inline Conditional theta_conditional(const Eigen::MatrixXd& q, double tau2, double sigma2,
                                     const std::vector<std::size_t>& counts,
                                     const Eigen::VectorXd& area_sums,
                                     const Eigen::VectorXd& theta, Eigen::Index site) {
  const Eigen::Index n = q.rows();
  Eigen::MatrixXd prec = q / tau2;
  for (Eigen::Index i = 0; i < n; ++i)
    prec(i, i) += static_cast<double>(counts[static_cast<std::size_t>(i)]) / sigma2;
  const Eigen::MatrixXd cov = prec.inverse();
  const Eigen::VectorXd mu = cov * (area_sums / sigma2);
  if (n == 1) return {mu(0), cov(0, 0)};

  std::vector<Eigen::Index> rest;
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != site) rest.push_back(i);
  const auto k = static_cast<Eigen::Index>(rest.size());
  Eigen::MatrixXd srr(k, k);
  Eigen::VectorXd sir(k), dr(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    sir(a) = cov(site, rest[a]);
    dr(a) = theta(rest[a]) - mu(rest[a]);
    for (Eigen::Index b = 0; b < k; ++b) srr(a, b) = cov(rest[a], rest[b]);
  }
  const Eigen::VectorXd w = srr.ldlt().solve(sir);
  return {mu(site) + w.dot(dr), cov(site, site) - w.dot(sir)};
}

/// Unnormalized log density of rho given theta and tau2, from the dense
/// determinant and quadratic form of Q(rho).
inline double log_rho_density(const carthresh::AreaGraph& g, const Eigen::VectorXd& theta,
                              double tau2, double rho) {
  const Eigen::MatrixXd q = leroux_q(g, rho);
  const double logdet = std::log(q.determinant());
  return 0.5 * logdet - theta.dot(q * theta) / (2.0 * tau2);
}

/// CDF of rho on (0, 1) from midpoint quadrature of the unnormalized density.
struct GridCdf {
  std::vector<double> edges;  // points at which cdf is known
  std::vector<double> cdf;

  double operator()(double r) const {
    if (r <= edges.front()) return 0.0;
    if (r >= edges.back()) return 1.0;
    const auto it = std::upper_bound(edges.begin(), edges.end(), r);
    const auto hi = static_cast<std::size_t>(it - edges.begin());
    const std::size_t lo = hi - 1;
    const double t = (r - edges[lo]) / (edges[hi] - edges[lo]);
    return cdf[lo] + t * (cdf[hi] - cdf[lo]);
  }
};

inline GridCdf rho_grid_cdf(const carthresh::AreaGraph& g, const Eigen::VectorXd& theta,
                            double tau2, std::size_t points) {
  std::vector<double> logf(points);
  const double h = 1.0 / static_cast<double>(points);
  for (std::size_t k = 0; k < points; ++k)
    logf[k] = log_rho_density(g, theta, tau2, (static_cast<double>(k) + 0.5) * h);
  const double top = *std::max_element(logf.begin(), logf.end());
  GridCdf out;
  out.edges.push_back(0.0);
  out.cdf.push_back(0.0);
  double acc = 0.0;
  for (std::size_t k = 0; k < points; ++k) {
    acc += std::exp(logf[k] - top) * h;
    out.edges.push_back(static_cast<double>(k + 1) * h);
    out.cdf.push_back(acc);
  }
  for (double& c : out.cdf) c /= acc;
  return out;
}

/// sup_r |F_emp(r) - F(r)| evaluated at the jump points of the empirical CDF.
inline double ks_distance(std::vector<double> draws, const GridCdf& f) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double fr = f(draws[i]);
    worst = std::max(worst, std::abs(fr - static_cast<double>(i) / n));
    worst = std::max(worst, std::abs(static_cast<double>(i + 1) / n - fr));
  }
  return worst;
}

/// Moran's I of v under binary weights.
inline double morans_i(const carthresh::AreaGraph& g, const Eigen::VectorXd& v) {
  const Eigen::VectorXd c = v.array() - v.mean();
  double num = 0.0;
  for (const auto& [i, j] : g.edges())
    num += 2.0 * c(static_cast<Eigen::Index>(i)) * c(static_cast<Eigen::Index>(j));
  const double s0 = 2.0 * static_cast<double>(g.edge_count());
  return static_cast<double>(g.size()) / s0 * num / c.squaredNorm();
}

/// Standard error of the mean of an autocorrelated series by batch means.
inline double batch_means_se(const std::vector<double>& xs, std::size_t batches = 50) {
  const std::size_t len = xs.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b)
    means[b] = std::accumulate(xs.begin() + static_cast<std::ptrdiff_t>(b * len),
                               xs.begin() + static_cast<std::ptrdiff_t>((b + 1) * len), 0.0) /
               static_cast<double>(len);
  const double mu = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(batches);
  double ss = 0.0;
  for (double m : means) ss += (m - mu) * (m - mu);
  return std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace oracle
