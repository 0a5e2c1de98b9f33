#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "carthresh/data.hpp"
#include "carthresh/error.hpp"
#include "carthresh/graph.hpp"
#include "carthresh/sampler.hpp"
#include "carthresh/simstudy.hpp"
#include "carthresh/spectral.hpp"
#include "carthresh/threshold.hpp"
#include "carthresh/validation.hpp"

namespace carthresh::cli {

namespace {

std::string num(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

Eigen::VectorXd read_xbar_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open area-means file '" + path + "'");
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size()) throw ParseError("invalid number '" + tok + "'", line_no);
      values.push_back(v);
    }
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 1) {
      throw ParseError("--min-m expects positive integers, got '" + item + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ParseError("--min-m is empty");
  return out;
}

struct ThresholdArgs {
  std::string adjacency;
  std::string data;
  std::string xbar;
  double rho = 0.0;
  double tau2 = 0.0;
  double sigma2 = 0.0;
  double gamma = 0.05;
  std::string min_m;
};

int cmd_threshold(const ThresholdArgs& a, std::ostream& out, std::ostream& err) {
  const AreaGraph g = read_adjacency_file(a.adjacency);
  if (!is_connected(g)) {
    err << "error: adjacency map is not connected\n";
    return kInputError;
  }
  const SpectralLaplacian spec = decompose(build_laplacian(g));
  const CovarianceSpec cov = CovarianceSpec::make(a.sigma2, a.tau2, a.rho);

  Eigen::VectorXd xbar;
  std::vector<std::size_t> counts;
  if (!a.data.empty()) {
    const MultilevelDataset ds = standardize(read_dataset_csv_file(a.data, g.size()));
    xbar = area_means(ds);
    counts = ds.area_counts();
  } else {
    xbar = read_xbar_file(a.xbar);
    if (static_cast<std::size_t>(xbar.size()) != g.size()) {
      err << "error: area-means file has " << xbar.size() << " values, map has " << g.size()
          << " units\n";
      return kInputError;
    }
  }
  if (!a.min_m.empty()) {
    counts = parse_counts(a.min_m);
    if (counts.size() == 1) counts.assign(g.size(), counts.front());
    if (counts.size() != g.size()) {
      err << "error: --min-m needs 1 or " << g.size() << " counts\n";
      return kInputError;
    }
  }
  const double n = static_cast<double>(g.size());
  if (xbar.squaredNorm() > n * (1.0 + 1e-8)) {
    err << "warning: sum of squared area means exceeds n; covariate does not look standardized\n";
  }

  const ThresholdReport report = m_star(spec, cov, a.gamma, xbar);
  write_report(out, report);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(report.d.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return report.d[i] > report.d[j]; });
  out << "top projections (index, lambda, d, share of d_dot):\n";
  for (std::size_t k = 0; k < std::min<std::size_t>(5, order.size()); ++k) {
    const Eigen::Index i = order[k];
    const double share = report.d_dot > 0.0 ? report.d[i] / report.d_dot : 0.0;
    out << "  " << i + 1 << ' ' << num(spec.eigvals[i]) << ' ' << num(report.d[i]) << ' '
        << num(share, 4) << '\n';
  }
  out << "sigma2 = " << num(cov.sigma2) << ", tau2 = " << num(cov.tau2) << ", n = " << g.size()
      << '\n';
  if (report.m_star.is_infinite()) {
    out << "m* = INFINITE: spatial model required\n";
  } else {
    out << "m* = " << report.m_star.value() << '\n';
  }
  if (!counts.empty()) {
    const auto verdict = assess_replication(report.m_star, counts);
    out << "min m_i = " << *std::min_element(counts.begin(), counts.end())
        << ", verdict: " << to_string(verdict) << '\n';
  }
  return kOk;
}

struct FitArgs {
  std::string adjacency;
  std::string data;
  std::string model = "spatial";
  long iters = 75000;
  long burnin = 15000;
  long thin = 5;
  std::uint64_t seed = 1;
  std::string dump_chain;
};

int cmd_fit(const FitArgs& a, std::ostream& out) {
  const AreaGraph g = read_adjacency_file(a.adjacency);
  const ModelKind model = parse_model(a.model);
  const MultilevelDataset ds = standardize(read_dataset_csv_file(a.data, g.size()));
  McmcConfig cfg;
  cfg.iterations = a.iters;
  cfg.burn_in = a.burnin;
  cfg.thin = a.thin;
  cfg.seed = a.seed;
  const PosteriorSummary s = run_chain(ds, g, model, cfg);

  out << "model = " << to_string(model) << '\n';
  out << "retained = " << s.retained << '\n';
  out << "parameter,mean,sd\n";
  out << "beta0," << num(s.beta[0].mean, 8) << ',' << num(s.beta[0].sd, 8) << '\n';
  for (std::size_t k = 1; k < s.beta.size(); ++k) {
    out << "beta" << k << "[" << ds.covariate_names()[k - 1] << "]," << num(s.beta[k].mean, 8)
        << ',' << num(s.beta[k].sd, 8) << '\n';
  }
  out << "sigma2," << num(s.sigma2.mean, 8) << ',' << num(s.sigma2.sd, 8) << '\n';
  out << "tau2," << num(s.tau2.mean, 8) << ',' << num(s.tau2.sd, 8) << '\n';
  if (model == ModelKind::spatial) {
    out << "rho," << num(s.rho.mean, 8) << ',' << num(s.rho.sd, 8) << '\n';
    out << "acceptance_rate_rho = " << num(s.acceptance_rate_rho, 4) << '\n';
  }
  if (!a.dump_chain.empty()) {
    std::ofstream chain(a.dump_chain);
    if (!chain) throw IoError("cannot write chain file '" + a.dump_chain + "'");
    write_chain_csv(chain, s);
  }
  return kOk;
}

struct SimulateArgs {
  std::size_t n = 25;
  std::size_t m = 5;
  double rho = 0.5;
  double tau2 = 0.5;
  double sigma2 = 0.5;
  std::optional<double> beta0;
  std::optional<double> beta1;
  std::string structure = "C2";
  std::string graph = "random";
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  AreaGraph g;
  if (a.graph == "random") {
    g = generate_random_connected(a.n, derive_seed(a.seed, {0x6772ULL}));
  } else if (a.graph == "grid") {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(a.n))));
    if (side * side != a.n) {
      err << "error: --graph grid needs a square number of units, got " << a.n << '\n';
      return kInputError;
    }
    g = generate_grid_queen(side, side);
  } else {
    err << "error: --graph must be 'random' or 'grid'\n";
    return kInputError;
  }
  const SpectralLaplacian spec = decompose(build_laplacian(g));
  Rng coef(derive_seed(a.seed, {0x62657461ULL}));
  TrueParams truth;
  truth.beta0 = coef.normal();
  truth.beta1 = coef.normal();
  if (a.beta0) truth.beta0 = *a.beta0;
  if (a.beta1) truth.beta1 = *a.beta1;
  truth.cov = CovarianceSpec::make(a.sigma2, a.tau2, a.rho);
  const SimulatedDataset sim =
      simulate_dataset(g, spec, truth, parse_structure(a.structure), a.n, a.m, a.seed);

  write_adjacency_file(a.out + ".adj", g);
  write_dataset_csv_file(a.out + ".csv", sim.data);

  const Eigen::VectorXd& th = sim.truth.theta;
  const double mean = th.mean();
  const double sd = th.size() > 1 ? std::sqrt((th.array() - mean).square().sum() /
                                              static_cast<double>(th.size() - 1))
                                  : 0.0;
  out << "wrote " << a.out << ".adj (" << g.size() << " units, " << g.edge_count() << " edges) and "
      << a.out << ".csv (" << sim.data.rows() << " rows)\n";
  out << "beta0 = " << num(truth.beta0) << ", beta1 = " << num(truth.beta1) << '\n';
  out << "theta: mean = " << num(mean) << ", sd = " << num(sd) << ", min = " << num(th.minCoeff())
      << ", max = " << num(th.maxCoeff()) << '\n';
  return kOk;
}

}  // namespace

int validate_command(std::uint64_t seed, std::size_t cases, std::ostream& out, std::ostream& err,
                     PrecisionFormula spatial, PrecisionFormula nonspatial) {
  const ValidationReport report = run_validation(seed, cases, std::move(spatial), std::move(nonspatial));
  out << "cases = " << report.cases.size() << '\n';
  out << "max relative error = " << num(report.max_rel_error, 3) << '\n';
  if (report.passed()) {
    out << "PASS (tolerance 1e-08)\n";
    return kOk;
  }
  out << "FAIL (tolerance 1e-08)\n";
  for (const auto& c : report.cases) {
    if (c.max_error() > 1e-8) {
      err << "offending instance seed " << c.seed << ": n = " << c.n << ", m = " << c.m
          << ", rho = " << c.rho << ", kappa = " << num(c.kappa) << ", error = " << num(c.max_error(), 3)
          << '\n';
    }
  }
  return kOracleFailure;
}

namespace {

struct GridArgs {
  std::string config;
  std::size_t workers = 0;
  std::string out = "results";
  bool dry_run = false;
};

int cmd_grid(const GridArgs& a, std::ostream& out, std::ostream& err) {
  const ExperimentGrid grid = read_grid_config_file(a.config);
  out << grid_card(grid) << '\n';
  if (a.dry_run) return kOk;
  const std::size_t workers =
      a.workers > 0 ? a.workers : std::max<unsigned>(1, std::thread::hardware_concurrency());
  std::size_t last_pct = 101;
  const auto results = run_grid(grid, workers, [&](std::size_t done, std::size_t total) {
    const std::size_t pct = done * 100 / total;
    if (pct != last_pct) {
      err << "\rreplicates " << done << "/" << total << " (" << pct << "%)" << std::flush;
      last_pct = pct;
    }
  });
  err << '\n';
  for (const auto& r : results) {
    if (r.failed) {
      err << "warning: cell n=" << r.key.n << " rho=" << r.key.rho << " tau2=" << r.key.tau2
          << " m=" << r.key.m << " " << to_string(r.key.structure) << " excluded " << r.excluded
          << " replicates\n";
    }
  }
  emit_results(results, a.out);
  out << "wrote " << a.out << "/variance_differences.csv and " << a.out << "/mean_differences.csv\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sample-size thresholds and samplers for spatial versus nonspatial multilevel areal models",
               args.empty() ? "carthresh" : args.front()};
  app.require_subcommand(1);

  ThresholdArgs ta;
  auto* threshold = app.add_subcommand("threshold", "Compute the within-area sample-size threshold m*");
  threshold->add_option("--adjacency", ta.adjacency, "Edge-list file of the areal map")->required();
  auto* data_opt = threshold->add_option("--data", ta.data, "Dataset CSV (area,y,x); x is standardized first");
  auto* xbar_opt = threshold->add_option("--xbar", ta.xbar, "Area means of the standardized covariate, one per unit");
  data_opt->excludes(xbar_opt);
  threshold->add_option("--rho", ta.rho, "Spatial correlation in [0, 1)")->required();
  threshold->add_option("--tau2", ta.tau2, "Spatial variance")->required();
  threshold->add_option("--sigma2", ta.sigma2, "Observation variance")->required();
  threshold->add_option("--gamma", ta.gamma, "Tolerance on the relative variance difference")
      ->capture_default_str();
  threshold->add_option("--min-m", ta.min_m,
                        "Per-area replication (one value or a comma-separated list) for a verdict");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit the spatial or nonspatial model by MCMC");
  fit->add_option("--adjacency", fa.adjacency, "Edge-list file of the areal map")->required();
  fit->add_option("--data", fa.data, "Dataset CSV (area,y,x)")->required();
  fit->add_option("--model", fa.model, "spatial or nonspatial")
      ->check(CLI::IsMember({"spatial", "nonspatial"}))
      ->capture_default_str();
  fit->add_option("--iters", fa.iters, "Total iterations")->capture_default_str();
  fit->add_option("--burnin", fa.burnin, "Burn-in iterations (proposal adapted here)")->capture_default_str();
  fit->add_option("--thin", fa.thin, "Keep every k-th post-burn-in draw")->capture_default_str();
  fit->add_option("--seed", fa.seed, "Chain seed")->capture_default_str();
  fit->add_option("--dump-chain", fa.dump_chain, "Write retained draws to this CSV");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Simulate a map and a multilevel dataset");
  simulate->add_option("--n", sa.n, "Number of areal units")->capture_default_str();
  simulate->add_option("--m", sa.m, "Observations per unit")->capture_default_str();
  simulate->add_option("--rho", sa.rho, "Spatial correlation in [0, 1)")->capture_default_str();
  simulate->add_option("--tau2", sa.tau2, "Spatial variance")->capture_default_str();
  simulate->add_option("--sigma2", sa.sigma2, "Observation variance")->capture_default_str();
  simulate->add_option("--beta0", sa.beta0, "Intercept (default: drawn from N(0, 1))");
  simulate->add_option("--beta1", sa.beta1, "Slope (default: drawn from N(0, 1))");
  simulate->add_option("--structure", sa.structure, "Covariate structure C1, C2 or C3")
      ->check(CLI::IsMember({"C1", "C2", "C3"}))
      ->capture_default_str();
  simulate->add_option("--graph", sa.graph, "random (spanning tree) or grid (square queen lattice)")
      ->check(CLI::IsMember({"random", "grid"}))
      ->capture_default_str();
  simulate->add_option("--seed", sa.seed, "Simulation seed")->capture_default_str();
  simulate->add_option("--out", sa.out, "Output prefix; writes <prefix>.adj and <prefix>.csv")->required();

  std::uint64_t validate_seed = 1;
  std::size_t validate_cases = 200;
  auto* validate = app.add_subcommand("validate", "Check closed-form precisions against dense matrix algebra");
  validate->add_option("--seed", validate_seed, "Instance seed")->capture_default_str();
  validate->add_option("--cases", validate_cases, "Number of random instances")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  GridArgs ga;
  auto* grid = app.add_subcommand("grid", "Run a simulation grid and write result CSVs");
  grid->add_option("--config", ga.config, "Grid config file (key = value)")->required();
  grid->add_option("--workers", ga.workers, "Worker threads (default: hardware concurrency)");
  grid->add_option("--out", ga.out, "Output directory")->capture_default_str();
  grid->add_flag("--dry-run", ga.dry_run, "Print the grid card and exit");

  std::vector<std::string> rest(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp& e) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help("carthresh"));
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }

  try {
    if (*threshold) {
      if (ta.data.empty() == ta.xbar.empty()) {
        err << "error: give exactly one of --data or --xbar\n";
        return kInputError;
      }
      return cmd_threshold(ta, out, err);
    }
    if (*fit) return cmd_fit(fa, out);
    if (*simulate) return cmd_simulate(sa, out, err);
    if (*validate) return validate_command(validate_seed, validate_cases, out, err);
    if (*grid) return cmd_grid(ga, out, err);
  } catch (const DivergenceError& e) {
    err << "error: chain diverged at " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}

}  // namespace carthresh::cli
