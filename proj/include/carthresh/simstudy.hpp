#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "carthresh/data.hpp"
#include "carthresh/sampler.hpp"

namespace carthresh {

/// Factorial simulation design. Each tau2 value pairs with sigma2 = 1 - tau2
/// so the total marginal variance stays at one.
struct ExperimentGrid {
  std::vector<std::size_t> n_values;
  std::vector<double> rho_values;
  std::vector<double> tau2_values;
  std::vector<std::size_t> m_values;
  std::vector<CovariateStructure> structures;
  std::size_t replicates = 100;
  double gamma = 0.05;
  McmcConfig mcmc;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
  std::size_t cell_count() const noexcept;

  /// 3 x 3 x 3 x 9 x 3 design with 100 datasets per cell and full-length chains.
  static ExperimentGrid full_scale();
};

/// Reads `key = value` lines (`#` comments; lists comma-separated). Keys:
/// n, rho, tau2, m, structures, replicates, gamma, iterations, burn_in,
/// thin, prior_a, prior_b, target_accept, seed. Throws ConfigError.
ExperimentGrid parse_grid_config(std::istream& in);
ExperimentGrid read_grid_config_file(const std::string& path);

/// One-line description of the grid size, e.g. "3 n x 3 rho x ... = 729 cells".
std::string grid_card(const ExperimentGrid& grid);

struct CellKey {
  std::size_t n = 0;
  double rho = 0.0;
  double tau2 = 0.0;
  double sigma2 = 0.0;
  std::size_t m = 0;
  CovariateStructure structure = CovariateStructure::C1;

  auto operator<=>(const CellKey&) const = default;
};

struct Interval {
  double mean = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

/// mean +- 1.96 sd / sqrt(R), sd with R - 1 denominator (0 when R = 1).
Interval mc_interval(std::span<const double> values);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input has no variation.
double spearman(std::span<const double> a, std::span<const double> b);

struct ReplicateOutcome {
  bool excluded = false;
  std::string reason;
  double abs_rel_var = 0.0;    ///< |Var(b1|Y,rho) - Var(b1|Y,0)| / Var(b1|Y,0)
  double abs_mean_diff = 0.0;  ///< |E(b1|Y,rho) - E(b1|Y,0)|
  double m_star = 0.0;         ///< +inf when infinite
};

/// Seeds for replicate `rep` of `cell`; none depend on scheduling.
struct ReplicateSeeds {
  std::uint64_t graph = 0;  ///< shared by every cell with the same (n, rep)
  std::uint64_t data = 0;
  std::uint64_t fit = 0;  ///< shared by both models
};
ReplicateSeeds replicate_seeds(std::uint64_t master, const CellKey& cell, std::size_t rep);

/// Simulate one dataset, fit both models on it, compare slope posteriors.
ReplicateOutcome run_replicate(const CellKey& cell, std::size_t rep, const ExperimentGrid& grid);

struct CellResult {
  CellKey key;
  Interval rel_var;
  Interval mean_diff;
  double m_star_mean = 0.0;  ///< +inf if any replicate had an infinite threshold
  std::size_t replicates = 0;
  std::size_t excluded = 0;
  bool failed = false;  ///< more than 20% of replicates excluded
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Every cell of the grid, sorted by key. Deterministic for a given grid and
/// seed whatever the worker count.
std::vector<CellResult> run_grid(const ExperimentGrid& grid, std::size_t workers,
                                 const ProgressFn& progress = {});

struct CrossingResult {
  bool censored = true;
  std::size_t crossing_m = 0;
  double m_star_mean = 0.0;  ///< at the crossing cell
  double ratio = 0.0;        ///< crossing_m / m_star_mean
};

/// Smallest m >= 2 in one (n, rho, kappa, structure) slice whose mean
/// |relVar| is at most gamma. Throws DomainError for fewer than four m values
/// or a slice mixing settings.
CrossingResult crossing_check(std::span<const CellResult> slice, double gamma);

/// Writes `variance_differences.csv` and `mean_differences.csv` into `dir`
/// (created if missing). Throws IoError.
void emit_results(const std::vector<CellResult>& results, const std::string& dir);

/// The two tables as strings, in the emitted byte format.
std::string format_results(const std::vector<CellResult>& results, bool variance);

}  // namespace carthresh
