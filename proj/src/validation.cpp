#include "carthresh/validation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "carthresh/data.hpp"
#include "carthresh/error.hpp"
#include "carthresh/rng.hpp"
#include "carthresh/threshold.hpp"

namespace carthresh {

Eigen::MatrixXd dense_omega(const Laplacian& lap, const CovarianceSpec& cov, std::size_t m) {
  const auto n = static_cast<Eigen::Index>(lap.n);
  const auto rows = n * static_cast<Eigen::Index>(m);
  const Eigen::MatrixXd q =
      cov.rho * lap.entries + (1.0 - cov.rho) * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd q_inv = q.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(rows, n);
  for (Eigen::Index r = 0; r < rows; ++r) z(r, r / static_cast<Eigen::Index>(m)) = 1.0;
  Eigen::MatrixXd omega = cov.tau2 * z * q_inv * z.transpose();
  omega.diagonal().array() += cov.sigma2;
  return omega;
}

double dense_slope_precision(const Laplacian& lap, const CovarianceSpec& cov, std::size_t m,
                             const Eigen::VectorXd& x) {
  const Eigen::MatrixXd omega = dense_omega(lap, cov, m);
  if (omega.rows() != x.size()) throw ShapeError("covariate length is not n * m");
  return x.dot(omega.ldlt().solve(x));
}

double ValidationCase::max_error() const noexcept {
  return std::max(rel_error_spatial, rel_error_nonspatial);
}

namespace {

AreaGraph random_test_map(std::size_t n, Rng& rng) {
  // A spanning tree keeps the map connected; extra chords vary the spectrum.
  const AreaGraph tree = generate_random_connected(n, rng.engine()());
  std::vector<AreaGraph::Edge> edges = tree.edges();
  const double chord_prob = 0.4 * rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < chord_prob) edges.emplace_back(i, j);
    }
  }
  return AreaGraph(n, edges);
}

}  // namespace

ValidationReport run_validation(std::uint64_t seed, std::size_t cases, PrecisionFormula spatial,
                                PrecisionFormula nonspatial) {
  if (!spatial) spatial = precision_spatial;
  if (!nonspatial) {
    nonspatial = [](const SpectralLaplacian&, const CovarianceSpec& c, std::size_t n, std::size_t m,
                    const Eigen::VectorXd& d) { return precision_nonspatial(c, n, m, d); };
  }
  constexpr std::array<double, 4> kRhos{0.0, 0.3, 0.7, 0.95};
  constexpr std::array<double, 3> kTau2{0.05, 0.50, 0.95};
  constexpr std::array<CovariateStructure, 3> kStructures{
      CovariateStructure::C1, CovariateStructure::C2, CovariateStructure::C3};

  ValidationReport report;
  report.cases.reserve(cases);
  for (std::size_t k = 0; k < cases; ++k) {
    ValidationCase vc;
    vc.seed = derive_seed(seed, {0x76616c6964ULL, k});
    Rng rng(vc.seed);
    vc.n = static_cast<std::size_t>(rng.uniform_int(2, 10));
    vc.m = static_cast<std::size_t>(rng.uniform_int(1, 5));
    vc.rho = kRhos[k % kRhos.size()];
    const double tau2 = kTau2[(k / kRhos.size()) % kTau2.size()];
    const auto cov = CovarianceSpec::make(1.0 - tau2, tau2, vc.rho);
    vc.kappa = cov.kappa();

    const AreaGraph g = random_test_map(vc.n, rng);
    const Laplacian lap = build_laplacian(g);
    const SpectralLaplacian spec = decompose(lap);

    // C3 with a single area draw can be constant; fall back to C2 then.
    const auto structure = kStructures[rng.uniform_int(0, 2)];
    const std::uint64_t cov_seed = rng.engine()();
    Eigen::VectorXd raw = gen_covariate(structure, vc.n, vc.m, cov_seed);
    if ((raw.array() == raw[0]).all()) raw = gen_covariate(CovariateStructure::C2, vc.n, vc.m, cov_seed);
    const MultilevelDataset ds = standardize(MultilevelDataset(
        vc.n, Eigen::VectorXd::Zero(raw.size()), Eigen::MatrixXd(raw), balanced_membership(vc.n, vc.m)));
    const Eigen::VectorXd x = ds.x().col(0);
    const Eigen::VectorXd d = projections(spec, area_means(ds));

    const double dense_rho = dense_slope_precision(lap, cov, vc.m, x);
    const double dense_zero =
        dense_slope_precision(lap, CovarianceSpec::make(cov.sigma2, cov.tau2, 0.0), vc.m, x);
    const auto rel = [](double got, double want) {
      const double e = std::abs(got - want) / std::abs(want);
      return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
    };
    try {
      vc.rel_error_spatial = rel(spatial(spec, cov, vc.n, vc.m, d), dense_rho);
      vc.rel_error_nonspatial = rel(nonspatial(spec, cov, vc.n, vc.m, d), dense_zero);
    } catch (const NumericError&) {
      vc.rel_error_spatial = std::numeric_limits<double>::infinity();
    }
    if (report.cases.empty() || vc.max_error() > report.max_rel_error) {
      report.worst = report.cases.size();
      report.max_rel_error = vc.max_error();
    }
    report.cases.push_back(vc);
  }
  return report;
}

}  // namespace carthresh
