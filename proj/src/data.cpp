#include "carthresh/data.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "carthresh/error.hpp"
#include "carthresh/rng.hpp"

namespace carthresh {

MultilevelDataset::MultilevelDataset(std::size_t n_areas, Eigen::VectorXd y, Eigen::MatrixXd x,
                                     std::vector<std::size_t> membership,
                                     std::vector<std::string> covariate_names, bool standardized)
    : n_areas_(n_areas),
      y_(std::move(y)),
      x_(std::move(x)),
      membership_(std::move(membership)),
      names_(std::move(covariate_names)),
      counts_(n_areas, 0),
      standardized_(standardized) {
  if (x_.rows() != y_.size() || membership_.size() != static_cast<std::size_t>(y_.size())) {
    throw ShapeError("dataset columns have different lengths");
  }
  if (x_.cols() < 1) throw ShapeError("dataset needs at least one covariate");
  if (names_.empty()) {
    names_.push_back("x");
    for (Eigen::Index k = 1; k < x_.cols(); ++k) names_.push_back("x" + std::to_string(k + 1));
  }
  if (names_.size() != static_cast<std::size_t>(x_.cols())) {
    throw ShapeError("covariate name count does not match covariate columns");
  }
  for (std::size_t a : membership_) {
    if (a >= n_areas_) {
      throw RangeError("area index " + std::to_string(a + 1) + " outside [1, " +
                       std::to_string(n_areas_) + "]");
    }
    ++counts_[a];
  }
}

bool MultilevelDataset::balanced() const noexcept { return replication().has_value(); }

std::optional<std::size_t> MultilevelDataset::replication() const noexcept {
  if (counts_.empty() || counts_.front() == 0) return std::nullopt;
  const std::size_t m = counts_.front();
  for (std::size_t c : counts_) {
    if (c != m) return std::nullopt;
  }
  return m;
}

std::string_view to_string(CovariateStructure s) noexcept {
  switch (s) {
    case CovariateStructure::C1:
      return "C1";
    case CovariateStructure::C2:
      return "C2";
    case CovariateStructure::C3:
      return "C3";
  }
  return "?";
}

CovariateStructure parse_structure(std::string_view text) {
  std::string up(text);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "C1") return CovariateStructure::C1;
  if (up == "C2") return CovariateStructure::C2;
  if (up == "C3") return CovariateStructure::C3;
  throw ParseError("unknown covariate structure '" + std::string(text) + "' (expected C1, C2 or C3)");
}

MultilevelDataset standardize(const MultilevelDataset& ds) {
  Eigen::MatrixXd x = ds.x();
  const double count = static_cast<double>(ds.rows());
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    auto col = x.col(k);
    const double mean = col.mean();
    col.array() -= mean;
    const double sd = std::sqrt(col.squaredNorm() / count);
    if (!(sd > 0.0)) {
      throw DegenerateCovariateError("covariate '" + ds.covariate_names()[static_cast<std::size_t>(k)] +
                                     "' is constant; cannot standardize");
    }
    col /= sd;
  }
  return MultilevelDataset(ds.areas(), ds.y(), std::move(x), ds.membership(), ds.covariate_names(),
                           true);
}

Eigen::VectorXd area_means(const MultilevelDataset& ds, std::size_t column) {
  if (column >= ds.covariates()) throw ShapeError("covariate column out of range");
  const auto n = static_cast<Eigen::Index>(ds.areas());
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(n);
  const auto& member = ds.membership();
  const auto col = static_cast<Eigen::Index>(column);
  for (std::size_t r = 0; r < member.size(); ++r) {
    sums[static_cast<Eigen::Index>(member[r])] += ds.x()(static_cast<Eigen::Index>(r), col);
  }
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto c = ds.area_counts()[static_cast<std::size_t>(a)];
    sums[a] = c == 0 ? 0.0 : sums[a] / static_cast<double>(c);
  }
  return sums;
}

std::vector<std::size_t> balanced_membership(std::size_t n, std::size_t m) {
  std::vector<std::size_t> out(n * m);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * m), m, i);
  return out;
}

Eigen::VectorXd gen_covariate(CovariateStructure structure, std::size_t n, std::size_t m,
                              std::uint64_t seed) {
  if (n == 0 || m == 0) throw DomainError("gen_covariate: n and m must be >= 1");
  Rng rng(derive_seed(seed, {0x636f76ULL}));
  Eigen::VectorXd x(static_cast<Eigen::Index>(n * m));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = structure == CovariateStructure::C1 ? 0.0 : rng.normal();
    for (std::size_t j = 0; j < m; ++j) {
      x[r++] = structure == CovariateStructure::C3 ? mu : mu + rng.normal();
    }
  }
  return x;
}

Eigen::VectorXd draw_leroux_effects(const SpectralLaplacian& spec, const CovarianceSpec& cov,
                                    std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x7468657461ULL}));
  const Eigen::VectorXd q = q_eigenvalues(spec, cov.rho);
  Eigen::VectorXd z(q.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal() * std::sqrt(cov.tau2 / q[i]);
  return spec.eigvecs * z;
}

SimulatedDataset simulate_dataset(const AreaGraph& g, const SpectralLaplacian& spec,
                                  const TrueParams& truth, CovariateStructure structure,
                                  std::size_t n, std::size_t m, std::uint64_t seed) {
  if (g.size() != n || spec.size() != n) {
    throw ShapeError("simulate_dataset: n disagrees with the graph or its spectrum");
  }
  if (!is_connected(g)) throw NotConnectedError("simulate_dataset needs a connected map");
  const CovarianceSpec cov = CovarianceSpec::make(truth.cov.sigma2, truth.cov.tau2, truth.cov.rho);

  SimulatedDataset out;
  out.truth = truth;
  out.truth.cov = cov;
  out.truth.theta = draw_leroux_effects(spec, cov, derive_seed(seed, {2}));
  Eigen::VectorXd x = gen_covariate(structure, n, m, derive_seed(seed, {1}));

  Rng noise(derive_seed(seed, {3}));
  const double sd = std::sqrt(cov.sigma2);
  std::vector<std::size_t> member = balanced_membership(n, m);
  Eigen::VectorXd y(x.size());
  for (Eigen::Index r = 0; r < y.size(); ++r) {
    const auto area = static_cast<Eigen::Index>(member[static_cast<std::size_t>(r)]);
    y[r] = truth.beta0 + truth.beta1 * x[r] + out.truth.theta[area] + sd * noise.normal();
  }
  out.data = MultilevelDataset(n, std::move(y), Eigen::MatrixXd(x), std::move(member));
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  if (s.empty()) throw ParseError("empty numeric field", line_no);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) {
    throw ParseError("invalid number '" + s + "'", line_no);
  }
  return v;
}

std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MultilevelDataset read_dataset_csv(std::istream& in, std::optional<std::size_t> n_areas) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_csv(line);
    break;
  }
  if (header.size() < 3 || header[0] != "area" || header[1] != "y") {
    throw ParseError("expected header 'area,y,x'", line_no);
  }
  const std::vector<std::string> names(header.begin() + 2, header.end());
  const std::size_t p = names.size();

  std::vector<std::size_t> member;
  std::vector<double> ys;
  std::vector<double> xs;
  std::size_t max_area = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != p + 2) {
      throw ParseError("expected " + std::to_string(p + 2) + " fields, got " +
                           std::to_string(cells.size()),
                       line_no);
    }
    const double area = parse_double(cells[0], line_no);
    if (area != std::floor(area) || area < 1.0) {
      throw RangeError("line " + std::to_string(line_no) + ": area must be a positive integer");
    }
    const auto a = static_cast<std::size_t>(area);
    if (n_areas && a > *n_areas) {
      throw RangeError("line " + std::to_string(line_no) + ": area " + std::to_string(a) +
                       " outside [1, " + std::to_string(*n_areas) + "]");
    }
    max_area = std::max(max_area, a);
    member.push_back(a - 1);
    ys.push_back(parse_double(cells[1], line_no));
    for (std::size_t k = 0; k < p; ++k) xs.push_back(parse_double(cells[2 + k], line_no));
  }
  if (member.empty()) throw ParseError("dataset has no rows", line_no);

  const auto rows = static_cast<Eigen::Index>(member.size());
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), rows);
  Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(p));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < p; ++k) {
      x(r, static_cast<Eigen::Index>(k)) = xs[static_cast<std::size_t>(r) * p + k];
    }
  }
  return MultilevelDataset(n_areas.value_or(max_area), std::move(y), std::move(x), std::move(member),
                           names);
}

MultilevelDataset read_dataset_csv_file(const std::string& path, std::optional<std::size_t> n_areas) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");
  return read_dataset_csv(in, n_areas);
}

void write_dataset_csv(std::ostream& out, const MultilevelDataset& ds) {
  out << "area,y";
  for (const auto& name : ds.covariate_names()) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    out << ds.membership()[r] + 1 << ',' << format17(ds.y()[row]);
    for (Eigen::Index k = 0; k < ds.x().cols(); ++k) out << ',' << format17(ds.x()(row, k));
    out << '\n';
  }
}

void write_dataset_csv_file(const std::string& path, const MultilevelDataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  write_dataset_csv(out, ds);
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace carthresh
