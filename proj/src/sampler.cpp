#include "carthresh/sampler.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "carthresh/error.hpp"

namespace carthresh {

std::string_view to_string(ModelKind m) noexcept {
  return m == ModelKind::spatial ? "spatial" : "nonspatial";
}

ModelKind parse_model(std::string_view text) {
  if (text == "spatial") return ModelKind::spatial;
  if (text == "nonspatial") return ModelKind::nonspatial;
  throw ParseError("unknown model '" + std::string(text) + "' (expected spatial or nonspatial)");
}

void McmcConfig::validate() const {
  if (iterations < 1) throw DomainError("iterations must be >= 1");
  if (burn_in < 0 || burn_in >= iterations) throw DomainError("burn_in must lie in [0, iterations)");
  if (thin < 1) throw DomainError("thin must be >= 1");
  if (!(prior_a > 0.0) || !(prior_b > 0.0)) throw DomainError("inverse-gamma hyperparameters must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw DomainError("target_accept must lie in (0, 1)");
  if (!(adapt_rate >= 0.0) || !(adapt_decay > 0.5 && adapt_decay <= 1.0)) {
    throw DomainError("Robbins-Monro constants need rate >= 0 and decay in (0.5, 1]");
  }
  if (fixed_covariance) {
    (void)CovarianceSpec::make(fixed_covariance->sigma2, fixed_covariance->tau2, fixed_covariance->rho);
  }
}

std::size_t McmcConfig::retained() const noexcept {
  return static_cast<std::size_t>((iterations - burn_in) / thin);
}

FitData::FitData(const MultilevelDataset& ds)
    : y_(ds.y()), membership_(ds.membership()), counts_(ds.area_counts()) {
  const auto rows = static_cast<Eigen::Index>(ds.rows());
  const auto p = static_cast<Eigen::Index>(ds.covariates());
  design_.resize(rows, p + 1);
  design_.col(0).setOnes();
  design_.rightCols(p) = ds.x();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design_);
  if (qr.rank() < design_.cols()) {
    throw SingularDesignError("design [1, X] has rank " + std::to_string(qr.rank()) + " < " +
                              std::to_string(design_.cols()) + " columns");
  }
  gram_.compute(design_.transpose() * design_);
  if (gram_.info() != Eigen::Success) throw SingularDesignError("X'X is not positive definite");
}

Eigen::VectorXd FitData::area_sums(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(areas()));
  for (std::size_t r = 0; r < membership_.size(); ++r) {
    out[static_cast<Eigen::Index>(membership_[r])] += v[static_cast<Eigen::Index>(r)];
  }
  return out;
}

Eigen::VectorXd FitData::expand(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows()));
  for (std::size_t r = 0; r < membership_.size(); ++r) {
    out[static_cast<Eigen::Index>(r)] = theta[static_cast<Eigen::Index>(membership_[r])];
  }
  return out;
}

ChainStreams::ChainStreams(std::uint64_t seed)
    : beta(derive_seed(seed, {1})),
      theta(derive_seed(seed, {2})),
      sigma2(derive_seed(seed, {3})),
      tau2(derive_seed(seed, {4})),
      rho(derive_seed(seed, {5})) {}

Eigen::VectorXd beta_conditional_mean(const ModelParams& state, const FitData& data) {
  const Eigen::VectorXd r = data.y() - data.expand(state.theta);
  return data.gram().solve(data.design().transpose() * r);
}

Eigen::VectorXd gibbs_beta(const ModelParams& state, const FitData& data, Rng& rng) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(data.coefficients()));
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
  // X'X = L L', so L^{-T} z has covariance (X'X)^{-1}.
  const Eigen::VectorXd noise = data.gram().matrixU().solve(z);
  return beta_conditional_mean(state, data) + std::sqrt(state.sigma2) * noise;
}

Eigen::VectorXd residual_area_means(const ModelParams& state, const FitData& data) {
  Eigen::VectorXd sums = data.area_sums(data.y() - data.design() * state.beta);
  for (Eigen::Index a = 0; a < sums.size(); ++a) {
    const auto c = data.counts()[static_cast<std::size_t>(a)];
    sums[a] = c == 0 ? 0.0 : sums[a] / static_cast<double>(c);
  }
  return sums;
}

NormalConditional theta_site_conditional(std::size_t area, const ModelParams& state,
                                         const Eigen::VectorXd& residual_means,
                                         const FitData& data, const AreaGraph& g,
                                         ModelKind model) {
  const double m = static_cast<double>(data.counts()[area]);
  const double rho = model == ModelKind::spatial ? state.rho : 0.0;
  double neighbour_sum = 0.0;
  if (rho != 0.0) {
    for (std::size_t k : g.neighbors(area)) neighbour_sum += state.theta[static_cast<Eigen::Index>(k)];
  }
  const double prior_precision = ((1.0 - rho) + rho * static_cast<double>(g.degree(area))) / state.tau2;
  const double variance = 1.0 / (m / state.sigma2 + prior_precision);
  const double mean =
      variance * (m * residual_means[static_cast<Eigen::Index>(area)] / state.sigma2 +
                  rho * neighbour_sum / state.tau2);
  return {mean, variance};
}

void gibbs_theta(ModelParams& state, const FitData& data, const AreaGraph& g, ModelKind model,
                 Rng& rng) {
  const Eigen::VectorXd rbar = residual_area_means(state, data);
  for (std::size_t i = 0; i < data.areas(); ++i) {
    const NormalConditional c = theta_site_conditional(i, state, rbar, data, g, model);
    state.theta[static_cast<Eigen::Index>(i)] = c.mean + std::sqrt(c.variance) * rng.normal();
  }
}

double InverseGamma::mean() const noexcept {
  return shape > 1.0 ? scale / (shape - 1.0) : std::numeric_limits<double>::infinity();
}

double draw(const InverseGamma& dist, Rng& rng) { return dist.scale / rng.gamma(dist.shape); }

InverseGamma sigma2_conditional(const ModelParams& state, const FitData& data,
                                const McmcConfig& cfg) {
  const Eigen::VectorXd resid = data.y() - data.design() * state.beta - data.expand(state.theta);
  return {cfg.prior_a + 0.5 * static_cast<double>(data.rows()),
          cfg.prior_b + 0.5 * resid.squaredNorm()};
}

InverseGamma tau2_conditional(const ModelParams& state, const AreaGraph& g, ModelKind model,
                              const McmcConfig& cfg) {
  const double sq = state.theta.squaredNorm();
  const double quad = model == ModelKind::spatial
                          ? state.rho * g.laplacian_quadform(state.theta) + (1.0 - state.rho) * sq
                          : sq;
  return {cfg.prior_a + 0.5 * static_cast<double>(state.theta.size()), cfg.prior_b + 0.5 * quad};
}

InverseGamma tau2_conditional(const ModelParams& state, const SpectralLaplacian& spec,
                              ModelKind model, const McmcConfig& cfg) {
  const double rho = model == ModelKind::spatial ? state.rho : 0.0;
  return {cfg.prior_a + 0.5 * static_cast<double>(state.theta.size()),
          cfg.prior_b + 0.5 * theta_quadform(spec, rho, state.theta)};
}

double log_rho_density(double rho, double theta_sq, double theta_lap, double tau2,
                       const SpectralLaplacian& spec) {
  return 0.5 * log_det_q(spec, rho) - (rho * theta_lap + (1.0 - rho) * theta_sq) / (2.0 * tau2);
}

double rho_log_acceptance(double rho, double rho_star, double theta_sq, double theta_lap,
                          double tau2, const SpectralLaplacian& spec) {
  const Eigen::VectorXd q = q_eigenvalues(spec, rho);
  const Eigen::VectorXd q_star = q_eigenvalues(spec, rho_star);
  const double log_det_ratio = 0.5 * (q_star.array() / q.array()).log().sum();
  // sum_i (rho* - rho)(lambda_i - 1) alpha_i^2 = (rho* - rho)(theta'L theta - theta'theta)
  const double quad_change = (rho_star - rho) * (theta_lap - theta_sq) / (2.0 * tau2);
  const double jacobian = std::log(rho_star * (1.0 - rho_star)) - std::log(rho * (1.0 - rho));
  return log_det_ratio - quad_change + jacobian;
}

double ProposalTuning::step() const noexcept { return std::exp(log_step); }

RhoStep metropolis_rho(const ModelParams& state, const SpectralLaplacian& spec, const AreaGraph& g,
                       const ProposalTuning& tuning, Rng& rng) {
  const double rho = state.rho;
  const double psi = std::log(rho / (1.0 - rho)) + tuning.step() * rng.normal();
  const double rho_star = 1.0 / (1.0 + std::exp(-psi));
  const double log_u = std::log(rng.uniform());
  if (!(rho_star > kRhoEpsilon && rho_star < 1.0 - kRhoEpsilon)) return {rho, false};
  const double log_r = rho_log_acceptance(rho, rho_star, state.theta.squaredNorm(),
                                          g.laplacian_quadform(state.theta), state.tau2, spec);
  if (log_u < log_r) return {rho_star, true};
  return {rho, false};
}

ProposalTuning adapt_proposal(ProposalTuning tuning, bool accepted, long iteration,
                              const McmcConfig& cfg) {
  const double gain = cfg.adapt_rate * std::pow(static_cast<double>(std::max(iteration, 1L)), -cfg.adapt_decay);
  tuning.log_step += gain * ((accepted ? 1.0 : 0.0) - cfg.target_accept);
  return tuning;
}

ModelParams initial_state(const FitData& data, ModelKind model, const McmcConfig& cfg) {
  ModelParams s;
  s.beta = data.gram().solve(data.design().transpose() * data.y());
  s.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.areas()));
  const Eigen::VectorXd resid = data.y() - data.design() * s.beta;
  const double var = resid.squaredNorm() / static_cast<double>(data.rows());
  const double half = var > 0.0 ? 0.5 * var : 1e-6;
  s.sigma2 = half;
  s.tau2 = half;
  s.rho = model == ModelKind::spatial ? 0.5 : 0.0;
  if (cfg.fixed_covariance) {
    s.sigma2 = cfg.fixed_covariance->sigma2;
    s.tau2 = cfg.fixed_covariance->tau2;
    s.rho = model == ModelKind::spatial ? cfg.fixed_covariance->rho : 0.0;
  }
  return s;
}

namespace {

ParameterSummary summarize(const double* first, std::size_t count) {
  ParameterSummary s;
  if (count == 0) return s;
  double sum = 0.0;
  for (std::size_t k = 0; k < count; ++k) sum += first[k];
  s.mean = sum / static_cast<double>(count);
  if (count > 1) {
    double ss = 0.0;
    for (std::size_t k = 0; k < count; ++k) ss += (first[k] - s.mean) * (first[k] - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(count - 1));
  }
  return s;
}

bool finite_state(const ModelParams& s) {
  return s.beta.allFinite() && s.theta.allFinite() && std::isfinite(s.sigma2) &&
         std::isfinite(s.tau2) && s.sigma2 > 0.0 && s.tau2 > 0.0 && std::isfinite(s.rho);
}

PosteriorSummary run_chain_impl(const MultilevelDataset& ds, const AreaGraph& g,
                                const SpectralLaplacian* spec, ModelKind model,
                                const McmcConfig& cfg) {
  cfg.validate();
  if (!ds.standardized()) throw ValidationError("run_chain expects a standardized dataset");
  if (g.size() != ds.areas()) {
    throw ValidationError("graph has " + std::to_string(g.size()) + " units but the dataset has " +
                          std::to_string(ds.areas()) + " areas");
  }
  const bool sample_covariance = !cfg.fixed_covariance.has_value();
  const bool sample_rho = model == ModelKind::spatial && sample_covariance;
  if (model == ModelKind::spatial) {
    if (!is_connected(g)) throw NotConnectedError("the spatial model needs a connected map");
    if (spec == nullptr || spec->size() != g.size()) throw ValidationError("spectrum does not match the graph");
  }

  const FitData data(ds);
  ChainStreams streams(cfg.seed);
  ModelParams state = initial_state(data, model, cfg);
  ProposalTuning tuning{cfg.initial_log_step};

  PosteriorSummary out;
  out.model = model;
  const std::size_t keep = cfg.retained();
  const auto p = static_cast<Eigen::Index>(data.coefficients());
  out.beta_draws.resize(static_cast<Eigen::Index>(keep), p);
  out.draw_iteration.reserve(keep);
  out.sigma2_draws.reserve(keep);
  out.tau2_draws.reserve(keep);
  out.rho_draws.reserve(keep);

  long post_proposals = 0;
  long post_accepts = 0;
  for (long t = 1; t <= cfg.iterations; ++t) {
    state.beta = gibbs_beta(state, data, streams.beta);
    gibbs_theta(state, data, g, model, streams.theta);
    if (sample_covariance) {
      state.sigma2 = draw(sigma2_conditional(state, data, cfg), streams.sigma2);
      state.tau2 = draw(tau2_conditional(state, g, model, cfg), streams.tau2);
    }
    if (sample_rho) {
      const RhoStep step = metropolis_rho(state, *spec, g, tuning, streams.rho);
      state.rho = step.rho;
      if (t <= cfg.burn_in) {
        tuning = adapt_proposal(tuning, step.accepted, t, cfg);
      } else {
        ++post_proposals;
        post_accepts += step.accepted ? 1 : 0;
      }
    }
    if (!finite_state(state)) throw DivergenceError("non-finite or nonpositive chain state", t);

    if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
      const auto row = static_cast<Eigen::Index>(out.draw_iteration.size());
      out.draw_iteration.push_back(t);
      out.beta_draws.row(row) = state.beta.transpose();
      out.sigma2_draws.push_back(state.sigma2);
      out.tau2_draws.push_back(state.tau2);
      out.rho_draws.push_back(state.rho);
    }
  }

  out.retained = out.draw_iteration.size();
  out.beta.resize(static_cast<std::size_t>(p));
  for (Eigen::Index k = 0; k < p; ++k) {
    const Eigen::VectorXd col = out.beta_draws.col(k);
    out.beta[static_cast<std::size_t>(k)] = summarize(col.data(), out.retained);
  }
  out.sigma2 = summarize(out.sigma2_draws.data(), out.retained);
  out.tau2 = summarize(out.tau2_draws.data(), out.retained);
  out.rho = summarize(out.rho_draws.data(), out.retained);
  out.mean_beta1 = out.beta[1].mean;
  out.var_beta1 = out.beta[1].sd * out.beta[1].sd;
  out.acceptance_rate_rho =
      post_proposals > 0 ? static_cast<double>(post_accepts) / static_cast<double>(post_proposals) : 0.0;
  out.final_log_step = tuning.log_step;
  return out;
}

}  // namespace

PosteriorSummary run_chain(const MultilevelDataset& ds, const AreaGraph& g, ModelKind model,
                           const McmcConfig& cfg) {
  if (model == ModelKind::nonspatial) return run_chain_impl(ds, g, nullptr, model, cfg);
  if (g.size() != ds.areas()) {
    throw ValidationError("graph has " + std::to_string(g.size()) + " units but the dataset has " +
                          std::to_string(ds.areas()) + " areas");
  }
  if (!is_connected(g)) throw NotConnectedError("the spatial model needs a connected map");
  const SpectralLaplacian spec = decompose(build_laplacian(g));
  return run_chain_impl(ds, g, &spec, model, cfg);
}

PosteriorSummary run_chain(const MultilevelDataset& ds, const AreaGraph& g,
                           const SpectralLaplacian& spec, ModelKind model, const McmcConfig& cfg) {
  return run_chain_impl(ds, g, &spec, model, cfg);
}

void write_chain_csv(std::ostream& out, const PosteriorSummary& s) {
  const auto p = s.beta_draws.cols();
  out << "iter,beta0,beta1,sigma2,tau2,rho";
  for (Eigen::Index k = 2; k < p; ++k) out << ",beta" << k;
  out << '\n';
  char buf[40];
  const auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t r = 0; r < s.retained; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out << s.draw_iteration[r] << ',' << num(s.beta_draws(row, 0)) << ',' << num(s.beta_draws(row, 1))
        << ',' << num(s.sigma2_draws[r]) << ',' << num(s.tau2_draws[r]) << ','
        << (s.model == ModelKind::spatial ? num(s.rho_draws[r]) : std::string("NA"));
    for (Eigen::Index k = 2; k < p; ++k) out << ',' << num(s.beta_draws(row, k));
    out << '\n';
  }
}

}  // namespace carthresh
