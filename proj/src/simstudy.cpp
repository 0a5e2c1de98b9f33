#include "carthresh/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "carthresh/error.hpp"
#include "carthresh/rng.hpp"
#include "carthresh/threshold.hpp"

namespace carthresh {

namespace {

constexpr double kMaxExcludedFraction = 0.2;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': invalid number '" + s + "'");
  }
}

long long to_integer(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': invalid integer '" + s + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& s) {
  const long long v = to_integer(key, s);
  if (v < 1) throw ConfigError("key '" + key + "': expected a positive integer, got " + s);
  return static_cast<std::size_t>(v);
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void ExperimentGrid::validate() const {
  if (n_values.empty() || rho_values.empty() || tau2_values.empty() || m_values.empty() ||
      structures.empty()) {
    throw ConfigError("every grid list (n, rho, tau2, m, structures) must be nonempty");
  }
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  for (std::size_t n : n_values) {
    if (n < 2) throw ConfigError("n values must be >= 2");
  }
  for (std::size_t m : m_values) {
    if (m < 1) throw ConfigError("m values must be >= 1");
  }
  for (double r : rho_values) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("rho values must lie in [0, 1)");
  }
  for (double t : tau2_values) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("tau2 values must lie in (0, 1) so sigma2 = 1 - tau2 > 0");
  }
  try {
    mcmc.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t ExperimentGrid::cell_count() const noexcept {
  return n_values.size() * rho_values.size() * tau2_values.size() * m_values.size() *
         structures.size();
}

ExperimentGrid ExperimentGrid::full_scale() {
  ExperimentGrid g;
  g.n_values = {25, 100, 400};
  g.rho_values = {0.05, 0.50, 0.95};
  g.tau2_values = {0.05, 0.50, 0.95};
  g.m_values = {1, 2, 5, 10, 20, 50, 80, 100, 200};
  g.structures = {CovariateStructure::C1, CovariateStructure::C2, CovariateStructure::C3};
  g.replicates = 100;
  g.gamma = 0.05;
  return g;
}

ExperimentGrid parse_grid_config(std::istream& in) {
  ExperimentGrid g;
  g.replicates = 100;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty value for '" + key + "'");

    if (key == "n") {
      g.n_values.clear();
      for (const auto& v : split_list(value)) g.n_values.push_back(to_count(key, v));
    } else if (key == "m") {
      g.m_values.clear();
      for (const auto& v : split_list(value)) g.m_values.push_back(to_count(key, v));
    } else if (key == "rho") {
      g.rho_values.clear();
      for (const auto& v : split_list(value)) g.rho_values.push_back(to_double(key, v));
    } else if (key == "tau2") {
      g.tau2_values.clear();
      for (const auto& v : split_list(value)) g.tau2_values.push_back(to_double(key, v));
    } else if (key == "structures") {
      g.structures.clear();
      for (const auto& v : split_list(value)) {
        try {
          g.structures.push_back(parse_structure(v));
        } catch (const ParseError& e) {
          throw ConfigError(e.what());
        }
      }
    } else if (key == "replicates") {
      g.replicates = to_count(key, value);
    } else if (key == "gamma") {
      g.gamma = to_double(key, value);
    } else if (key == "iterations") {
      g.mcmc.iterations = static_cast<long>(to_integer(key, value));
    } else if (key == "burn_in") {
      g.mcmc.burn_in = static_cast<long>(to_integer(key, value));
    } else if (key == "thin") {
      g.mcmc.thin = static_cast<long>(to_integer(key, value));
    } else if (key == "prior_a") {
      g.mcmc.prior_a = to_double(key, value);
    } else if (key == "prior_b") {
      g.mcmc.prior_b = to_double(key, value);
    } else if (key == "target_accept") {
      g.mcmc.target_accept = to_double(key, value);
    } else if (key == "seed") {
      g.seed = static_cast<std::uint64_t>(to_integer(key, value));
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  g.validate();
  return g;
}

ExperimentGrid read_grid_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid config '" + path + "'");
  return parse_grid_config(in);
}

std::string grid_card(const ExperimentGrid& g) {
  std::ostringstream out;
  out << g.n_values.size() << " n x " << g.rho_values.size() << " rho x " << g.tau2_values.size()
      << " kappa x " << g.m_values.size() << " m x " << g.structures.size()
      << " structures = " << g.cell_count() << " cells, " << g.replicates
      << " replicates each, " << g.mcmc.iterations << " iterations (burn-in " << g.mcmc.burn_in
      << ", thin " << g.mcmc.thin << ")";
  return out.str();
}

Interval mc_interval(std::span<const double> values) {
  Interval iv;
  if (values.empty()) {
    iv.mean = iv.lo95 = iv.hi95 = std::numeric_limits<double>::quiet_NaN();
    return iv;
  }
  const double r = static_cast<double>(values.size());
  iv.mean = std::accumulate(values.begin(), values.end(), 0.0) / r;
  double ss = 0.0;
  for (double v : values) ss += (v - iv.mean) * (v - iv.mean);
  const double sd = values.size() > 1 ? std::sqrt(ss / (r - 1.0)) : 0.0;
  const double half = 1.96 * sd / std::sqrt(r);
  iv.lo95 = iv.mean - half;
  iv.hi95 = iv.mean + half;
  return iv;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: inputs differ in length");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

ReplicateSeeds replicate_seeds(std::uint64_t master, const CellKey& c, std::size_t rep) {
  const auto s = static_cast<std::uint64_t>(c.structure);
  ReplicateSeeds out;
  out.graph = derive_seed(master, {0x6772ULL, c.n, rep});
  out.data = derive_seed(master, {0x6461ULL, c.n, seed_id(c.rho), seed_id(c.tau2), c.m, s, rep});
  out.fit = derive_seed(master, {0x6669ULL, c.n, seed_id(c.rho), seed_id(c.tau2), c.m, s, rep});
  return out;
}

ReplicateOutcome run_replicate(const CellKey& cell, std::size_t rep, const ExperimentGrid& grid) {
  const ReplicateSeeds seeds = replicate_seeds(grid.seed, cell, rep);
  const AreaGraph g = generate_random_connected(cell.n, seeds.graph);
  const SpectralLaplacian spec = decompose(build_laplacian(g));

  Rng coef(derive_seed(seeds.data, {0x62657461ULL}));
  TrueParams truth;
  truth.beta0 = coef.normal();
  truth.beta1 = coef.normal();
  truth.cov = CovarianceSpec::make(cell.sigma2, cell.tau2, cell.rho);
  const SimulatedDataset sim =
      simulate_dataset(g, spec, truth, cell.structure, cell.n, cell.m, seeds.data);
  const MultilevelDataset ds = standardize(sim.data);

  ReplicateOutcome out;
  out.m_star = m_star(spec, truth.cov, grid.gamma, area_means(ds)).m_star.as_double();

  McmcConfig cfg = grid.mcmc;
  cfg.seed = seeds.fit;
  try {
    const PosteriorSummary spatial = run_chain(ds, g, spec, ModelKind::spatial, cfg);
    const PosteriorSummary independent = run_chain(ds, g, spec, ModelKind::nonspatial, cfg);
    out.abs_rel_var = std::abs(spatial.var_beta1 - independent.var_beta1) / independent.var_beta1;
    out.abs_mean_diff = std::abs(spatial.mean_beta1 - independent.mean_beta1);
    if (!std::isfinite(out.abs_rel_var) || !std::isfinite(out.abs_mean_diff)) {
      out.excluded = true;
      out.reason = "non-finite posterior summary";
    }
  } catch (const DivergenceError& e) {
    out.excluded = true;
    out.reason = e.what();
  }
  return out;
}

namespace {

std::vector<CellKey> enumerate_cells(const ExperimentGrid& grid) {
  std::vector<CellKey> cells;
  cells.reserve(grid.cell_count());
  for (std::size_t n : grid.n_values) {
    for (double rho : grid.rho_values) {
      for (double tau2 : grid.tau2_values) {
        for (std::size_t m : grid.m_values) {
          for (CovariateStructure s : grid.structures) {
            cells.push_back(CellKey{n, rho, tau2, 1.0 - tau2, m, s});
          }
        }
      }
    }
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

CellResult aggregate(const CellKey& key, std::span<const ReplicateOutcome> outcomes) {
  CellResult cell;
  cell.key = key;
  std::vector<double> rel;
  std::vector<double> diff;
  double m_star_sum = 0.0;
  for (const auto& o : outcomes) {
    if (o.excluded) {
      ++cell.excluded;
      continue;
    }
    rel.push_back(o.abs_rel_var);
    diff.push_back(o.abs_mean_diff);
    m_star_sum += o.m_star;
  }
  cell.replicates = rel.size();
  cell.rel_var = mc_interval(rel);
  cell.mean_diff = mc_interval(diff);
  cell.m_star_mean = rel.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : m_star_sum / static_cast<double>(rel.size());
  cell.failed = static_cast<double>(cell.excluded) >
                kMaxExcludedFraction * static_cast<double>(outcomes.size());
  return cell;
}

}  // namespace

std::vector<CellResult> run_grid(const ExperimentGrid& grid, std::size_t workers,
                                 const ProgressFn& progress) {
  grid.validate();
  const std::vector<CellKey> cells = enumerate_cells(grid);
  const std::size_t reps = grid.replicates;
  const std::size_t total = cells.size() * reps;
  std::vector<ReplicateOutcome> outcomes(total);

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex mutex;
  std::exception_ptr failure;
  const auto work = [&] {
    for (;;) {
      const std::size_t task = next.fetch_add(1);
      if (task >= total) return;
      {
        std::lock_guard lock(mutex);
        if (failure) return;
      }
      try {
        outcomes[task] = run_replicate(cells[task / reps], task % reps, grid);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
      const std::size_t finished = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard lock(mutex);
        progress(finished, total);
      }
    }
  };

  const std::size_t pool = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(total, 1));
  if (pool == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(pool);
    for (std::size_t w = 0; w < pool; ++w) threads.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<CellResult> results;
  results.reserve(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    results.push_back(aggregate(cells[c], std::span(outcomes).subspan(c * reps, reps)));
  }
  return results;
}

CrossingResult crossing_check(std::span<const CellResult> slice, double gamma) {
  if (slice.size() < 4) throw DomainError("crossing_check needs at least four m values");
  std::vector<const CellResult*> sorted;
  for (const auto& c : slice) {
    const CellKey& a = c.key;
    const CellKey& b = slice.front().key;
    if (a.n != b.n || a.rho != b.rho || a.tau2 != b.tau2 || a.structure != b.structure) {
      throw DomainError("crossing_check slice mixes settings");
    }
    sorted.push_back(&c);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const CellResult* a, const CellResult* b) { return a->key.m < b->key.m; });
  CrossingResult out;
  for (const CellResult* c : sorted) {
    if (c->key.m < 2 || c->failed) continue;
    if (c->rel_var.mean <= gamma) {
      out.censored = false;
      out.crossing_m = c->key.m;
      out.m_star_mean = c->m_star_mean;
      out.ratio = static_cast<double>(c->key.m) / c->m_star_mean;
      return out;
    }
  }
  return out;
}

std::string format_results(const std::vector<CellResult>& results, bool variance) {
  std::vector<const CellResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const CellResult* a, const CellResult* b) { return a->key < b->key; });
  std::ostringstream out;
  out << "n,rho,tau2,sigma2,m,structure,stat,mean,lo95,hi95,replicates,m_star_mean\n";
  for (const CellResult* r : sorted) {
    const Interval& iv = variance ? r->rel_var : r->mean_diff;
    const bool bad = r->failed;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out << r->key.n << ',' << fmt(r->key.rho) << ',' << fmt(r->key.tau2) << ','
        << fmt(r->key.sigma2) << ',' << r->key.m << ',' << to_string(r->key.structure) << ','
        << (variance ? "abs_rel_var" : "abs_mean_diff") << ',' << fmt(bad ? nan : iv.mean) << ','
        << fmt(bad ? nan : iv.lo95) << ',' << fmt(bad ? nan : iv.hi95) << ',' << r->replicates
        << ',' << fmt(r->m_star_mean) << '\n';
  }
  return out.str();
}

void emit_results(const std::vector<CellResult>& results, const std::string& dir) {
  if (results.empty()) throw DomainError("no results to emit");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  const auto write = [&](const std::string& name, bool variance) {
    const std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << format_results(results, variance);
    if (!out) throw IoError("write failed for '" + path + "'");
  };
  write("variance_differences.csv", true);
  write("mean_differences.csv", false);
}

}  // namespace carthresh
