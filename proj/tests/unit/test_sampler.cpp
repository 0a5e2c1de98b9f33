#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "carthresh/data.hpp"
#include "carthresh/error.hpp"
#include "carthresh/graph.hpp"
#include "carthresh/rng.hpp"
#include "carthresh/sampler.hpp"
#include "carthresh/spectral.hpp"
#include "oracles.hpp"

using namespace carthresh;

namespace {

struct Setup {
  AreaGraph g;
  SpectralLaplacian spec;
  MultilevelDataset data;
  TrueParams truth;
};

Setup simulated(std::size_t n, std::size_t m, double sigma2, double tau2, double rho,
                std::uint64_t seed, CovariateStructure s = CovariateStructure::C2) {
  Setup out;
  out.g = generate_random_connected(n, seed);
  out.spec = decompose(build_laplacian(out.g));
  TrueParams truth;
  truth.beta0 = 0.5;
  truth.beta1 = 1.0;
  truth.cov = CovarianceSpec::make(sigma2, tau2, rho);
  auto sim = simulate_dataset(out.g, out.spec, truth, s, n, m, seed + 100);
  out.data = standardize(sim.data);
  out.truth = sim.truth;
  return out;
}

McmcConfig short_config(long iters, long burn, long thin, std::uint64_t seed) {
  McmcConfig cfg;
  cfg.iterations = iters;
  cfg.burn_in = burn;
  cfg.thin = thin;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("model names and config") {
  CHECK(parse_model("spatial") == ModelKind::spatial);
  CHECK(parse_model("nonspatial") == ModelKind::nonspatial);
  CHECK(to_string(ModelKind::nonspatial) == "nonspatial");
  CHECK_THROWS_AS(parse_model("car"), ParseError);

  McmcConfig cfg;
  CHECK(cfg.iterations == 75000);
  CHECK(cfg.burn_in == 15000);
  CHECK(cfg.thin == 5);
  CHECK(cfg.retained() == 12000);
  CHECK_NOTHROW(cfg.validate());
  cfg.burn_in = cfg.iterations;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = McmcConfig{};
  cfg.thin = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = McmcConfig{};
  cfg.target_accept = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("design rank") {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(6, 0, 1);
  Eigen::MatrixXd x(6, 2);
  x.col(0) << 1, 2, 3, 4, 5, 6;
  x.col(1) = x.col(0);
  CHECK_THROWS_AS(FitData(MultilevelDataset(3, y, x, balanced_membership(3, 2))), SingularDesignError);
  CHECK_THROWS_AS(FitData(MultilevelDataset(3, y, Eigen::MatrixXd::Ones(6, 1), balanced_membership(3, 2))),
                  SingularDesignError);
  CHECK_NOTHROW(FitData(MultilevelDataset(3, y, x.leftCols(1), balanced_membership(3, 2))));
}

TEST_CASE("beta update") {
  const Setup s = simulated(3, 2, 1.0, 0.5, 0.5, 9);
  const FitData fd(s.data);
  ModelParams state;
  state.theta = Eigen::VectorXd::Zero(3);
  state.rho = 0.5;
  state.tau2 = 0.5;

  SUBCASE("degenerate variance pins the OLS fit") {
    state.sigma2 = 1e-12;
    Rng rng(1);
    const Eigen::VectorXd ols =
        fd.design().colPivHouseholderQr().solve(s.data.y());
    const Eigen::VectorXd b = gibbs_beta(state, fd, rng);
    CHECK((b - ols).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("draw mean matches the closed form") {
    state.sigma2 = 1.0;
    state.theta << 0.3, -0.2, 0.9;
    const Eigen::MatrixXd x = fd.design();
    const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
    const Eigen::VectorXd r = s.data.y() - oracle::incidence(3, 2) * state.theta;
    const Eigen::VectorXd want = xtx_inv * x.transpose() * r;
    CHECK((beta_conditional_mean(state, fd) - want).cwiseAbs().maxCoeff() < 1e-12);

    Rng rng(2);
    const int draws = 50000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(2);
    for (int k = 0; k < draws; ++k) {
      const Eigen::VectorXd b = gibbs_beta(state, fd, rng);
      sum += b;
      sumsq += b.cwiseProduct(b);
    }
    const Eigen::VectorXd mean = sum / draws;
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt(xtx_inv(j, j) / draws);
      CHECK(std::abs(mean(j) - want(j)) < 4.0 * se);
      const double var = sumsq(j) / draws - mean(j) * mean(j);
      CHECK(var == doctest::Approx(xtx_inv(j, j)).epsilon(0.03));
    }
  }
}

TEST_CASE("theta site conditional") {
  const Setup s = simulated(3, 4, 0.8, 0.6, 0.0, 2);
  const FitData fd(s.data);
  ModelParams state;
  state.beta = Eigen::Vector2d(0.1, 0.4);
  state.theta = Eigen::Vector3d(0.2, -0.5, 0.7);
  state.sigma2 = 0.8;
  state.tau2 = 0.6;

  SUBCASE("independent effects with zero residual") {
    state.rho = 0.0;
    const Eigen::VectorXd rbar = Eigen::VectorXd::Zero(3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto c = theta_site_conditional(i, state, rbar, fd, s.g, ModelKind::spatial);
      CHECK(c.mean == 0.0);
      CHECK(c.variance == doctest::Approx(1.0 / (4.0 / 0.8 + 1.0 / 0.6)).epsilon(1e-14));
    }
  }
  SUBCASE("no pooling when the prior vanishes") {
    state.tau2 = 1e12;
    state.rho = 0.7;
    const Eigen::VectorXd rbar = residual_area_means(state, fd);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto c = theta_site_conditional(i, state, rbar, fd, s.g, ModelKind::spatial);
      CHECK(c.mean == doctest::Approx(rbar(static_cast<Eigen::Index>(i))).epsilon(1e-9));
    }
  }
  SUBCASE("dense conditioning on the path") {
    const AreaGraph path(3, {{0, 1}, {1, 2}});
    const Eigen::VectorXd rbar = residual_area_means(state, fd);
    const Eigen::VectorXd sums = rbar * 4.0;
    const std::vector<std::size_t> counts(3, 4);
    for (double rho : {0.0, 0.4, 0.95}) {
      state.rho = rho;
      for (ModelKind model : {ModelKind::spatial, ModelKind::nonspatial}) {
        const double r = model == ModelKind::spatial ? rho : 0.0;
        const Eigen::MatrixXd q = oracle::leroux_q(path, r);
        for (Eigen::Index i = 0; i < 3; ++i) {
          const auto c = theta_site_conditional(static_cast<std::size_t>(i), state, rbar, fd, path, model);
          const auto want = oracle::theta_conditional(q, state.tau2, state.sigma2, counts, sums, state.theta, i);
          CHECK(std::abs(c.mean - want.mean) <= 1e-8);
          CHECK(std::abs(c.variance - want.variance) <= 1e-8);
        }
      }
    }
  }
}

TEST_CASE("unbalanced areas use their own counts") {
  const AreaGraph g(3, {{0, 1}, {1, 2}});
  Eigen::VectorXd y(6), x(6);
  y << 1.0, 0.5, -0.2, 0.3, 2.0, 1.1;
  x << -1.0, 0.2, 0.7, 1.5, -0.4, 0.1;
  const std::vector<std::size_t> mem = {0, 1, 1, 2, 2, 2};
  const MultilevelDataset ds = standardize(MultilevelDataset(3, y, x, mem));
  const FitData fd(ds);
  ModelParams state;
  state.beta = Eigen::Vector2d(0.2, -0.3);
  state.theta = Eigen::Vector3d(0.1, 0.0, -0.4);
  state.sigma2 = 0.5;
  state.tau2 = 1.5;
  state.rho = 0.6;
  const Eigen::VectorXd rbar = residual_area_means(state, fd);
  const Eigen::VectorXd sums = fd.area_sums(fd.y() - fd.design() * state.beta);
  const std::vector<std::size_t> counts = {1, 2, 3};
  const Eigen::MatrixXd q = oracle::leroux_q(g, 0.6);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto c = theta_site_conditional(static_cast<std::size_t>(i), state, rbar, fd, g, ModelKind::spatial);
    const auto want = oracle::theta_conditional(q, 1.5, 0.5, counts, sums, state.theta, i);
    CHECK(std::abs(c.mean - want.mean) <= 1e-10);
    CHECK(std::abs(c.variance - want.variance) <= 1e-10);
  }
}

TEST_CASE("variance full conditionals") {
  McmcConfig cfg;
  SUBCASE("sigma2 with zero residuals") {
    Eigen::VectorXd x(10);
    x << -2, -1.5, -1, -0.5, 0, 0.1, 0.5, 1, 1.5, 2;
    MultilevelDataset raw(5, Eigen::VectorXd::Zero(10), x, balanced_membership(5, 2));
    const MultilevelDataset std_x = standardize(raw);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(10) + 2.0 * std_x.x().col(0);
    const FitData fd(MultilevelDataset(5, y, std_x.x(), balanced_membership(5, 2), {}, true));
    ModelParams state;
    state.beta = Eigen::Vector2d(1.0, 2.0);
    state.theta = Eigen::VectorXd::Zero(5);
    const InverseGamma ig = sigma2_conditional(state, fd, cfg);
    CHECK(ig.shape == 5.01);
    CHECK(ig.scale == doctest::Approx(0.01).epsilon(1e-12));
  }
  SUBCASE("sigma2 shape with random residuals") {
    const Setup s = simulated(7, 3, 0.5, 0.5, 0.3, 5);
    const FitData fd(s.data);
    ModelParams state;
    state.beta = Eigen::Vector2d(0.3, 0.1);
    state.theta = s.truth.theta;
    const InverseGamma ig = sigma2_conditional(state, fd, cfg);
    CHECK(ig.shape == 0.01 + 21.0 / 2.0);
    const Eigen::VectorXd resid = fd.y() - fd.design() * state.beta - oracle::incidence(7, 3) * state.theta;
    CHECK(ig.scale == doctest::Approx(0.01 + 0.5 * resid.squaredNorm()).epsilon(1e-12));
  }
  SUBCASE("tau2") {
    const Setup s = simulated(9, 2, 0.5, 0.5, 0.6, 6);
    ModelParams state;
    state.theta = Eigen::VectorXd::Zero(9);
    state.rho = 0.6;
    InverseGamma ig = tau2_conditional(state, s.g, ModelKind::spatial, cfg);
    CHECK(ig.shape == 0.01 + 4.5);
    CHECK(ig.scale == 0.01);

    state.theta = s.truth.theta;
    state.rho = 0.0;
    ig = tau2_conditional(state, s.g, ModelKind::spatial, cfg);
    CHECK(ig.scale == doctest::Approx(0.01 + 0.5 * state.theta.squaredNorm()).epsilon(1e-13));

    for (double rho : {0.2, 0.9}) {
      state.rho = rho;
      const double dense = state.theta.dot(oracle::leroux_q(s.g, rho) * state.theta);
      const InverseGamma by_edges = tau2_conditional(state, s.g, ModelKind::spatial, cfg);
      const InverseGamma by_spec = tau2_conditional(state, s.spec, ModelKind::spatial, cfg);
      CHECK(by_edges.scale == doctest::Approx(0.01 + 0.5 * dense).epsilon(1e-12));
      CHECK(by_spec.scale == doctest::Approx(by_edges.scale).epsilon(1e-12));
      const InverseGamma iid = tau2_conditional(state, s.g, ModelKind::nonspatial, cfg);
      CHECK(iid.scale == doctest::Approx(0.01 + 0.5 * state.theta.squaredNorm()).epsilon(1e-13));
    }
  }
  SUBCASE("draws match the inverse-gamma mean") {
    const InverseGamma ig{6.5, 3.0};
    Rng rng(77);
    const int n = 200000;
    double sum = 0.0;
    for (int k = 0; k < n; ++k) sum += draw(ig, rng);
    const double var = ig.scale * ig.scale / ((ig.shape - 1) * (ig.shape - 1) * (ig.shape - 2));
    CHECK(std::abs(sum / n - ig.mean()) < 3.0 * std::sqrt(var / n));
    CHECK(std::isinf(InverseGamma{1.0, 1.0}.mean()));
  }
}

TEST_CASE("rho acceptance ratio") {
  const Setup s = simulated(6, 2, 0.5, 0.5, 0.7, 12);
  const Eigen::VectorXd& th = s.truth.theta;
  const double sq = th.squaredNorm();
  const double lap = s.g.laplacian_quadform(th);

  CHECK(rho_log_acceptance(0.4, 0.4, sq, lap, 0.5, s.spec) == 0.0);

  // Every eigenvalue equal to one: only the Jacobian survives.
  SpectralLaplacian flat = s.spec;
  flat.eigvals.setOnes();
  const double jac = std::log(0.7 * 0.3) - std::log(0.4 * 0.6);
  CHECK(rho_log_acceptance(0.4, 0.7, sq, sq, 0.5, flat) == doctest::Approx(jac).epsilon(1e-13));

  for (auto [rho, star] : {std::pair{0.2, 0.5}, {0.9, 0.3}, {0.01, 0.999}, {0.6, 0.61}}) {
    const double naive = oracle::log_rho_density(s.g, th, 0.5, star) -
                         oracle::log_rho_density(s.g, th, 0.5, rho) +
                         std::log(star * (1 - star)) - std::log(rho * (1 - rho));
    CHECK(oracle::rel_err(rho_log_acceptance(rho, star, sq, lap, 0.5, s.spec), naive) <= 1e-10);
    const double via_density = log_rho_density(star, sq, lap, 0.5, s.spec) -
                               log_rho_density(rho, sq, lap, 0.5, s.spec) +
                               std::log(star * (1 - star)) - std::log(rho * (1 - rho));
    CHECK(oracle::rel_err(rho_log_acceptance(rho, star, sq, lap, 0.5, s.spec), via_density) <= 1e-10);
  }
}

TEST_CASE("metropolis step") {
  const Setup s = simulated(6, 2, 0.5, 0.5, 0.7, 12);
  ModelParams state;
  state.theta = s.truth.theta;
  state.tau2 = 0.5;
  state.rho = 0.5;
  SUBCASE("zero step always accepts") {
    Rng rng(3);
    ProposalTuning tiny{-60.0};
    for (int k = 0; k < 100; ++k) {
      const RhoStep st = metropolis_rho(state, s.spec, s.g, tiny, rng);
      CHECK(st.accepted);
      CHECK(st.rho == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
  SUBCASE("stays inside the open interval") {
    Rng rng(4);
    ProposalTuning huge{std::log(50.0)};
    for (int k = 0; k < 2000; ++k) {
      const RhoStep st = metropolis_rho(state, s.spec, s.g, huge, rng);
      CHECK(st.rho > kRhoEpsilon);
      CHECK(st.rho < 1.0 - kRhoEpsilon);
      state.rho = st.rho;
    }
  }
}

TEST_CASE("Robbins-Monro adaptation") {
  McmcConfig cfg;
  ProposalTuning t{0.0};
  for (long i = 1; i <= 50; ++i) {
    const ProposalTuning next = adapt_proposal(t, true, i, cfg);
    CHECK(next.log_step > t.log_step);
    t = next;
  }
  const ProposalTuning up = adapt_proposal({0.0}, true, 7, cfg);
  const ProposalTuning down = adapt_proposal({0.0}, false, 7, cfg);
  CHECK(0.234 * up.log_step + 0.766 * down.log_step == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(up.log_step == doctest::Approx(std::pow(7.0, -0.6) * 0.766).epsilon(1e-14));
}

TEST_CASE("chain bookkeeping") {
  const Setup s = simulated(10, 3, 0.5, 0.5, 0.5, 20);
  const McmcConfig cfg = short_config(1000, 200, 7, 5);
  const PosteriorSummary a = run_chain(s.data, s.g, ModelKind::spatial, cfg);
  CHECK(a.retained == (1000 - 200) / 7);
  CHECK(a.retained == cfg.retained());
  CHECK(a.draw_iteration.front() == 207);
  CHECK(a.var_beta1 >= 0.0);
  CHECK(a.acceptance_rate_rho > 0.0);

  const PosteriorSummary b = run_chain(s.data, s.g, ModelKind::spatial, cfg);
  CHECK(a.beta_draws == b.beta_draws);
  CHECK(a.rho_draws == b.rho_draws);
  CHECK(a.sigma2_draws == b.sigma2_draws);

  McmcConfig other = cfg;
  other.seed = 6;
  CHECK_FALSE(run_chain(s.data, s.g, ModelKind::spatial, other).beta_draws == a.beta_draws);

  const PosteriorSummary ns = run_chain(s.data, s.g, ModelKind::nonspatial, cfg);
  CHECK(ns.acceptance_rate_rho == 0.0);
  for (double r : ns.rho_draws) CHECK(r == 0.0);

  std::ostringstream sp, nsp;
  write_chain_csv(sp, a);
  write_chain_csv(nsp, ns);
  CHECK(sp.str().rfind("iter,beta0,beta1,sigma2,tau2,rho\n", 0) == 0);
  std::string second_line = nsp.str().substr(nsp.str().find('\n') + 1);
  second_line = second_line.substr(0, second_line.find('\n'));
  CHECK(second_line.size() > 3);
  CHECK(second_line.substr(second_line.size() - 3) == ",NA");
}

TEST_CASE("chain preconditions") {
  const Setup s = simulated(8, 3, 0.5, 0.5, 0.5, 21);
  const McmcConfig cfg = short_config(100, 10, 1, 1);
  const MultilevelDataset raw(s.data.areas(), s.data.y(), s.data.x(), s.data.membership());
  CHECK_THROWS_AS(run_chain(raw, s.g, ModelKind::spatial, cfg), ValidationError);
  CHECK_THROWS_AS(run_chain(s.data, generate_random_connected(7, 1), ModelKind::spatial, cfg),
                  ValidationError);
  const AreaGraph split(8, {{0, 1}, {2, 3}});
  CHECK_THROWS_AS(run_chain(s.data, split, ModelKind::spatial, cfg), NotConnectedError);
  CHECK_NOTHROW(run_chain(s.data, split, ModelKind::nonspatial, cfg));
}

TEST_CASE("divergence is reported with its iteration") {
  const Setup s = simulated(5, 2, 0.5, 0.5, 0.5, 22);
  const Eigen::VectorXd y = s.data.y() * 1e160;
  const MultilevelDataset huge(5, y, s.data.x(), s.data.membership(), {}, true);
  try {
    run_chain(huge, s.g, ModelKind::spatial, short_config(100, 10, 1, 1));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() >= 1);
  }
}

TEST_CASE("multiple covariates") {
  const Setup s = simulated(12, 4, 0.5, 0.5, 0.5, 23);
  Eigen::MatrixXd x(s.data.rows(), 2);
  x.col(0) = s.data.x().col(0);
  Rng rng(1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, 1) = rng.normal();
  const MultilevelDataset wide = standardize(MultilevelDataset(12, s.data.y(), x, s.data.membership(), {"x", "z"}));
  const PosteriorSummary p = run_chain(wide, s.g, ModelKind::spatial, short_config(2000, 500, 2, 3));
  CHECK(p.beta.size() == 3);
  std::ostringstream out;
  write_chain_csv(out, p);
  CHECK(out.str().rfind("iter,beta0,beta1,sigma2,tau2,rho,beta2\n", 0) == 0);
}

TEST_CASE("adaptive run reaches a sensible acceptance rate") {
  const Setup s = simulated(25, 5, 0.5, 0.5, 0.9, 30);
  const PosteriorSummary p = run_chain(s.data, s.g, ModelKind::spatial, short_config(20000, 5000, 5, 8));
  CHECK(p.acceptance_rate_rho >= 0.15);
  CHECK(p.acceptance_rate_rho <= 0.35);
}

TEST_CASE("variance components are roughly calibrated") {
  int covered = 0;
  for (std::uint64_t r = 0; r < 50; ++r) {
    const Setup s = simulated(25, 5, 0.5, 0.5, 0.5, 400 + r);
    const PosteriorSummary p = run_chain(s.data, s.g, ModelKind::spatial, short_config(6000, 2000, 2, r));
    std::vector<double> total(p.retained);
    double mean = 0.0;
    for (std::size_t k = 0; k < p.retained; ++k) {
      total[k] = p.sigma2_draws[k] + p.tau2_draws[k];
      mean += total[k];
    }
    mean /= static_cast<double>(p.retained);
    double ss = 0.0;
    for (double t : total) ss += (t - mean) * (t - mean);
    const double sd = std::sqrt(ss / static_cast<double>(p.retained - 1));
    // Standardizing x leaves the variance components on the outcome scale.
    if (std::abs(mean - 1.0) <= 3.0 * sd) ++covered;
  }
  CHECK(covered >= 45);
}
