#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "carthresh/data.hpp"
#include "carthresh/graph.hpp"
#include "carthresh/rng.hpp"
#include "carthresh/spectral.hpp"

namespace carthresh {

enum class ModelKind { spatial, nonspatial };

std::string_view to_string(ModelKind m) noexcept;
/// "spatial" or "nonspatial"; ParseError otherwise.
ModelKind parse_model(std::string_view text);

/// One state of the chain. beta[0] is the intercept, beta[k] pairs with
/// covariate column k - 1. rho stays 0 for the nonspatial model.
struct ModelParams {
  Eigen::VectorXd beta;
  Eigen::VectorXd theta;
  double sigma2 = 1.0;
  double tau2 = 1.0;
  double rho = 0.0;
};

/// Run lengths, priors and Metropolis tuning. Defaults are the full-scale
/// study settings (75,000 draws, 15,000 burn-in, thin 5, IG(0.01, 0.01)).
struct McmcConfig {
  long iterations = 75000;
  long burn_in = 15000;
  long thin = 5;
  double prior_a = 0.01;
  double prior_b = 0.01;
  double target_accept = 0.234;
  std::uint64_t seed = 1;
  /// Robbins-Monro step: log s += adapt_rate * t^-adapt_decay * (accepted - target).
  double adapt_rate = 1.0;
  double adapt_decay = 0.6;
  double initial_log_step = 0.0;
  /// When set, sigma2, tau2 and rho are held at these values and only
  /// (beta, theta) are sampled.
  std::optional<CovarianceSpec> fixed_covariance;

  /// Throws DomainError on an inconsistent configuration.
  void validate() const;
  std::size_t retained() const noexcept;
};

/// rho is confined to (kRhoEpsilon, 1 - kRhoEpsilon); proposals outside are rejected.
inline constexpr double kRhoEpsilon = 1e-8;

/// Design matrix [1, covariates] and per-area bookkeeping for one dataset.
class FitData {
 public:
  /// Throws SingularDesignError when [1, X] is rank deficient.
  explicit FitData(const MultilevelDataset& ds);

  std::size_t areas() const noexcept { return counts_.size(); }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(y_.size()); }
  std::size_t coefficients() const noexcept { return static_cast<std::size_t>(design_.cols()); }
  const Eigen::MatrixXd& design() const noexcept { return design_; }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  const std::vector<std::size_t>& membership() const noexcept { return membership_; }
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  /// Cholesky factor of X'X.
  const Eigen::LLT<Eigen::MatrixXd>& gram() const noexcept { return gram_; }

  /// Z' v.
  Eigen::VectorXd area_sums(const Eigen::VectorXd& v) const;
  /// Z theta.
  Eigen::VectorXd expand(const Eigen::VectorXd& theta) const;

 private:
  Eigen::MatrixXd design_;
  Eigen::VectorXd y_;
  std::vector<std::size_t> membership_;
  std::vector<std::size_t> counts_;
  Eigen::LLT<Eigen::MatrixXd> gram_;
};

/// Independent streams per parameter block, split from one chain seed.
struct ChainStreams {
  explicit ChainStreams(std::uint64_t seed);
  Rng beta;
  Rng theta;
  Rng sigma2;
  Rng tau2;
  Rng rho;
};

/// (X'X)^{-1} X' (y - Z theta).
Eigen::VectorXd beta_conditional_mean(const ModelParams& state, const FitData& data);

/// Draw from N((X'X)^{-1} X' r, sigma2 (X'X)^{-1}), r = y - Z theta.
Eigen::VectorXd gibbs_beta(const ModelParams& state, const FitData& data, Rng& rng);

struct NormalConditional {
  double mean = 0.0;
  double variance = 0.0;
};

/// Per-area means of y - X beta (0 for areas without rows).
Eigen::VectorXd residual_area_means(const ModelParams& state, const FitData& data);

/// Full conditional of theta_i given every other theta_k. For the
/// nonspatial model the neighbour terms drop out (rho is treated as 0).
NormalConditional theta_site_conditional(std::size_t area, const ModelParams& state,
                                         const Eigen::VectorXd& residual_means,
                                         const FitData& data, const AreaGraph& g,
                                         ModelKind model);

/// Sequential single-site sweep over areas 0..n-1, in place.
void gibbs_theta(ModelParams& state, const FitData& data, const AreaGraph& g, ModelKind model,
                 Rng& rng);

struct InverseGamma {
  double shape = 1.0;
  double scale = 1.0;
  /// scale / (shape - 1); +inf for shape <= 1.
  double mean() const noexcept;
};

double draw(const InverseGamma& dist, Rng& rng);

/// IG(a + N/2, b + SSR/2) with SSR = sum (y - X beta - theta_area)^2.
InverseGamma sigma2_conditional(const ModelParams& state, const FitData& data,
                                const McmcConfig& cfg);

/// IG(a + n/2, b + theta' Q(rho) theta / 2); Q = I for the nonspatial model.
/// The quadratic form is taken over graph edges.
InverseGamma tau2_conditional(const ModelParams& state, const AreaGraph& g, ModelKind model,
                              const McmcConfig& cfg);

/// Same distribution with the quadratic form evaluated spectrally.
InverseGamma tau2_conditional(const ModelParams& state, const SpectralLaplacian& spec,
                              ModelKind model, const McmcConfig& cfg);

/// Unnormalized log full conditional of rho:
///   0.5 sum log(rho lambda_i + 1 - rho) - (rho theta'L theta + (1 - rho) theta'theta) / (2 tau2).
double log_rho_density(double rho, double theta_sq, double theta_lap, double tau2,
                       const SpectralLaplacian& spec);

/// log R for a move rho -> rho_star on the logit scale, including the
/// Jacobian rho*(1 - rho*) / (rho (1 - rho)).
double rho_log_acceptance(double rho, double rho_star, double theta_sq, double theta_lap,
                          double tau2, const SpectralLaplacian& spec);

struct ProposalTuning {
  double log_step = 0.0;
  double step() const noexcept;
};

struct RhoStep {
  double rho = 0.5;
  bool accepted = false;
};

/// One logit-scale random-walk Metropolis update of rho.
RhoStep metropolis_rho(const ModelParams& state, const SpectralLaplacian& spec, const AreaGraph& g,
                       const ProposalTuning& tuning, Rng& rng);

/// Robbins-Monro update of the log proposal scale for 1-based burn-in
/// iteration `iteration`.
ProposalTuning adapt_proposal(ProposalTuning tuning, bool accepted, long iteration,
                              const McmcConfig& cfg);

struct ParameterSummary {
  double mean = 0.0;
  double sd = 0.0;
};

/// Retained draws and their summaries.
struct PosteriorSummary {
  ModelKind model = ModelKind::spatial;
  std::vector<ParameterSummary> beta;
  ParameterSummary sigma2;
  ParameterSummary tau2;
  ParameterSummary rho;
  double mean_beta1 = 0.0;
  double var_beta1 = 0.0;
  /// Post-burn-in acceptance of rho proposals; 0 when rho is not sampled.
  double acceptance_rate_rho = 0.0;
  double final_log_step = 0.0;
  std::size_t retained = 0;

  std::vector<long> draw_iteration;
  Eigen::MatrixXd beta_draws;  ///< retained x coefficients
  std::vector<double> sigma2_draws;
  std::vector<double> tau2_draws;
  std::vector<double> rho_draws;
};

/// Starting state: OLS beta, theta = 0, sigma2 = tau2 = half the OLS
/// residual variance, rho = 0.5 (0 for nonspatial); fixed covariance wins.
ModelParams initial_state(const FitData& data, ModelKind model, const McmcConfig& cfg);

/// Runs one chain. Sweep order per iteration: beta, theta, sigma2, tau2, rho.
/// Throws ValidationError for an unstandardized dataset or a graph of the
/// wrong size, NotConnectedError for a disconnected map under the spatial
/// model, DivergenceError on a non-finite state.
PosteriorSummary run_chain(const MultilevelDataset& ds, const AreaGraph& g, ModelKind model,
                           const McmcConfig& cfg);

/// As above with a precomputed spectrum of `g`.
PosteriorSummary run_chain(const MultilevelDataset& ds, const AreaGraph& g,
                           const SpectralLaplacian& spec, ModelKind model, const McmcConfig& cfg);

/// Columns iter,beta0,beta1,sigma2,tau2,rho (rho NA for the nonspatial
/// model); extra coefficients follow as beta2, beta3, ...
void write_chain_csv(std::ostream& out, const PosteriorSummary& summary);

}  // namespace carthresh
