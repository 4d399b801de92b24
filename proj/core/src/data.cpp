#include "qatriage/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "qatriage/error.hpp"
#include "qatriage/format.hpp"

namespace qatriage {

namespace {

double parse_cell(const std::string& cell, const std::string& source, std::size_t line) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{} || result.ptr != end) {
    throw ParseError(source, line, "non-numeric cell '" + cell + "'");
  }
  if (!std::isfinite(value)) {
    throw ParseError(source, line, "non-finite cell '" + cell + "'");
  }
  return value;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream stream(line);
  while (std::getline(stream, cell, ',')) {
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    cells.emplace_back();
  }
  return cells;
}

struct SampleStats {
  double mean = 0.0;
  double var = 0.0;  // n-1 denominator
};

SampleStats sample_stats(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  return {mean, values.size() > 1 ? ss / (n - 1.0) : 0.0};
}

bool is_unsafe(const PlanRecord& record, double safety_threshold) {
  return record.gpr < safety_threshold;
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.feature_names = dataset.feature_names;
  out.provenance = dataset.provenance;
  out.records.reserve(indices.size());
  for (std::size_t idx : indices) {
    out.records.push_back(dataset.records[idx]);
  }
  return out;
}

double softplus(double t) {
  // max(t, 0) + log1p(exp(-|t|)); stable for large |t|.
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

constexpr double kSignalSd = 2.0;  // prior scale of w . x across the population

struct SynthDraws {
  std::vector<double> weights;
  Matrix features;            // n x dim
  std::vector<double> noise;  // already scaled by noise_sd
};

void check_synth_config(const SynthConfig& cfg) {
  if (cfg.n == 0) throw Error("synth_generate needs n > 0");
  if (cfg.dim == 0) throw Error("synth_generate needs dim > 0");
  if (!(cfg.unsafe_rate > 0.0) || !(cfg.unsafe_rate < 1.0)) {
    throw Error("unsafe_rate must lie in (0, 1)");
  }
  if (cfg.noise_sd < 0.0) throw Error("noise_sd must be >= 0");
}

// One RNG stream, consumed in a fixed order (weights, features, noise), so
// make_synth_model and synth_generate agree bitwise.
SynthDraws draw_synth(const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  SynthDraws draws;
  const double weight_sd = kSignalSd / std::sqrt(static_cast<double>(cfg.dim));
  draws.weights.resize(cfg.dim);
  for (double& w : draws.weights) w = weight_sd * unit(rng);
  draws.features = Matrix(cfg.n, cfg.dim);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (std::size_t j = 0; j < cfg.dim; ++j) {
      draws.features(i, j) = unit(rng);
    }
  }
  draws.noise.resize(cfg.n);
  for (double& z : draws.noise) z = cfg.noise_sd * unit(rng);
  return draws;
}

double clamp_gpr(double raw) { return std::clamp(raw, 0.0, 100.0); }

double tune_bias(const SynthConfig& cfg, const SynthDraws& draws) {
  std::vector<double> signal(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const auto row = draws.features.row(i);
    signal[i] = std::inner_product(row.begin(), row.end(), draws.weights.begin(), 0.0);
  }
  const auto unsafe_count = [&](double bias) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const double gpr = clamp_gpr(100.0 - softplus(signal[i] + bias) + draws.noise[i]);
      if (gpr < 95.0) ++count;
    }
    return count;
  };

  const double target = cfg.unsafe_rate * static_cast<double>(cfg.n);
  const auto lo = static_cast<std::size_t>(std::ceil(0.8 * target));
  const auto hi = static_cast<std::size_t>(std::floor(1.2 * target));

  // unsafe_count is non-decreasing in bias, so bisect.
  double b_lo = -200.0;
  double b_hi = 200.0;
  for (int iter = 0; iter < 100; ++iter) {
    const double mid = 0.5 * (b_lo + b_hi);
    const std::size_t count = unsafe_count(mid);
    if (count >= lo && count <= hi) return mid;
    if (count < lo) {
      b_lo = mid;
    } else {
      b_hi = mid;
    }
  }
  throw Error("synthetic generator bias search failed to reach the target unsafe rate");
}

}  // namespace

double SynthModel::mean_gpr(std::span<const double> x) const {
  if (x.size() != weights.size()) {
    throw DimensionError("mean_gpr", weights.size(), x.size());
  }
  const double signal = std::inner_product(x.begin(), x.end(), weights.begin(), 0.0);
  return clamp_gpr(100.0 - softplus(signal + bias));
}

const std::vector<std::string>& canonical_feature_names() {
  static const std::vector<std::string> names = {
      "PAAJA",     "PEM",    "Pgantryvel", "PI",     "PmaxAP_v", "PMAXJ",
      "PmaxnRegs", "PMCS",   "PminAP_va",  "PMSAS2", "PMUCP",    "PuniaccMLC"};
  return names;
}

Dataset load_csv(const std::string& path) {
  std::ifstream input(path);
  if (!input) {
    throw Error("cannot open '" + path + "'");
  }
  std::string line;
  if (!std::getline(input, line)) {
    throw ParseError(path, 1, "missing header row");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_line(line);
  std::size_t gpr_column = header.size();
  Dataset dataset;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "gpr") {
      if (gpr_column != header.size()) {
        throw ParseError(path, 1, "duplicate gpr column");
      }
      gpr_column = i;
    } else {
      dataset.feature_names.push_back(header[i]);
    }
  }
  if (gpr_column == header.size()) {
    throw ParseError(path, 1, "missing gpr column");
  }

  std::size_t line_number = 1;
  while (std::getline(input, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path, line_number,
                       "expected " + std::to_string(header.size()) + " cells, got " +
                           std::to_string(cells.size()));
    }
    PlanRecord record;
    record.features.reserve(dataset.feature_names.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double value = parse_cell(cells[i], path, line_number);
      if (i == gpr_column) {
        record.gpr = value;
      } else {
        record.features.push_back(value);
      }
    }
    if (record.gpr < 0.0 || record.gpr > 100.0) {
      throw ParseError(path, line_number,
                       "gpr " + format_double(record.gpr) + " outside [0, 100]");
    }
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

void save_csv(const std::string& path, const Dataset& dataset) {
  std::ofstream output(path);
  if (!output) {
    throw Error("cannot write '" + path + "'");
  }
  for (const std::string& name : dataset.feature_names) {
    output << name << ',';
  }
  output << "gpr\n";
  for (const PlanRecord& record : dataset.records) {
    if (record.features.size() != dataset.feature_names.size()) {
      throw DimensionError("save_csv", dataset.feature_names.size(), record.features.size());
    }
    for (double value : record.features) {
      output << format_double(value) << ',';
    }
    output << format_double(record.gpr) << '\n';
  }
  if (!output) {
    throw Error("write failed for '" + path + "'");
  }
}

Matrix feature_matrix(const Dataset& dataset) {
  Matrix matrix(dataset.size(), dataset.dim());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const PlanRecord& record = dataset.records[i];
    if (record.features.size() != dataset.dim()) {
      throw DimensionError("feature_matrix", dataset.dim(), record.features.size());
    }
    for (std::size_t j = 0; j < dataset.dim(); ++j) {
      matrix(i, j) = record.features[j];
    }
  }
  return matrix;
}

std::vector<double> labels(const Dataset& dataset) {
  std::vector<double> out(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out[i] = dataset.records[i].gpr;
  }
  return out;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error("welch_t_test needs at least two observations per sample");
  }
  const SampleStats sa = sample_stats(a);
  const SampleStats sb = sample_stats(b);
  if (sa.var == 0.0 && sb.var == 0.0) {
    throw Error("welch_t_test is degenerate: both sample variances are zero");
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ua = sa.var / na;
  const double ub = sb.var / nb;
  WelchResult result;
  result.t = (sa.mean - sb.mean) / std::sqrt(ua + ub);
  result.df = (ua + ub) * (ua + ub) /
              (ua * ua / (na - 1.0) + ub * ub / (nb - 1.0));
  const boost::math::students_t dist(result.df);
  result.p = 2.0 * boost::math::cdf(dist, -std::abs(result.t));
  return result;
}

std::vector<std::string> select_features(const Dataset& dataset, double threshold,
                                         double safety_threshold) {
  std::vector<std::size_t> unsafe_idx;
  std::vector<std::size_t> safe_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (is_unsafe(dataset.records[i], safety_threshold) ? unsafe_idx : safe_idx).push_back(i);
  }
  if (unsafe_idx.size() < 2 || safe_idx.size() < 2) {
    throw Error("select_features needs at least two records in each class");
  }
  std::vector<std::string> selected;
  std::vector<double> a(unsafe_idx.size());
  std::vector<double> b(safe_idx.size());
  for (std::size_t j = 0; j < dataset.dim(); ++j) {
    for (std::size_t k = 0; k < unsafe_idx.size(); ++k) {
      a[k] = dataset.records[unsafe_idx[k]].features[j];
    }
    for (std::size_t k = 0; k < safe_idx.size(); ++k) {
      b[k] = dataset.records[safe_idx[k]].features[j];
    }
    const SampleStats sa = sample_stats(a);
    const SampleStats sb = sample_stats(b);
    if (sa.var == 0.0 && sb.var == 0.0) {
      // Constant within both classes: keep only a perfect separator.
      if (sa.mean != sb.mean) selected.push_back(dataset.feature_names[j]);
      continue;
    }
    if (welch_t_test(a, b).p < threshold) {
      selected.push_back(dataset.feature_names[j]);
    }
  }
  return selected;
}

Dataset project_features(const Dataset& dataset, const std::vector<std::string>& names) {
  std::vector<std::size_t> indices;
  indices.reserve(names.size());
  for (const std::string& name : names) {
    const auto it =
        std::find(dataset.feature_names.begin(), dataset.feature_names.end(), name);
    if (it == dataset.feature_names.end()) {
      throw Error("project_features: unknown feature '" + name + "'");
    }
    indices.push_back(static_cast<std::size_t>(it - dataset.feature_names.begin()));
  }
  Dataset out;
  out.feature_names = names;
  out.provenance = dataset.provenance;
  out.records.reserve(dataset.size());
  for (const PlanRecord& record : dataset.records) {
    PlanRecord projected;
    projected.gpr = record.gpr;
    projected.features.reserve(indices.size());
    for (std::size_t idx : indices) {
      projected.features.push_back(record.features[idx]);
    }
    out.records.push_back(std::move(projected));
  }
  return out;
}

Split split(const Dataset& dataset, const SplitSpec& spec) {
  if (!(spec.train_frac > 0.0) || !(spec.val_frac > 0.0) || !(spec.test_frac > 0.0)) {
    throw Error("split fractions must be positive");
  }
  if (std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9) {
    throw Error("split fractions must sum to 1");
  }
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_frac * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_frac * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw Error("split produced an empty part; dataset too small for the fractions");
  }
  Split parts;
  parts.train = subset(dataset, std::span(order).subspan(0, n_train));
  parts.val = subset(dataset, std::span(order).subspan(n_train, n_val));
  parts.test = subset(dataset, std::span(order).subspan(n_train + n_val));
  return parts;
}

Dataset balance_training(const Dataset& train, double safety_threshold, std::uint64_t seed) {
  std::vector<std::size_t> unsafe_idx;
  std::vector<std::size_t> safe_idx;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (is_unsafe(train.records[i], safety_threshold) ? unsafe_idx : safe_idx).push_back(i);
  }
  if (unsafe_idx.empty() || safe_idx.empty()) {
    throw Error("balance_training needs both classes present");
  }
  if (unsafe_idx.size() == safe_idx.size()) {
    return train;
  }
  const std::vector<std::size_t>& minority =
      unsafe_idx.size() < safe_idx.size() ? unsafe_idx : safe_idx;
  const std::size_t deficit =
      std::max(unsafe_idx.size(), safe_idx.size()) - minority.size();
  Dataset balanced = train;
  balanced.records.reserve(train.size() + deficit);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, minority.size() - 1);
  for (std::size_t k = 0; k < deficit; ++k) {
    balanced.records.push_back(train.records[minority[pick(rng)]]);
  }
  return balanced;
}

Standardizer fit_standardizer(const Dataset& train) {
  if (train.size() < 2) {
    throw Error("fit_standardizer needs at least two records");
  }
  Standardizer standardizer;
  std::vector<double> column(train.size());
  for (std::size_t j = 0; j < train.dim(); ++j) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      column[i] = train.records[i].features[j];
    }
    const SampleStats stats = sample_stats(column);
    if (stats.var == 0.0) {
      standardizer.dropped.push_back(train.feature_names[j]);
      continue;
    }
    standardizer.feature_names.push_back(train.feature_names[j]);
    standardizer.means.push_back(stats.mean);
    standardizer.sds.push_back(std::sqrt(stats.var));
  }
  if (standardizer.feature_names.empty()) {
    throw Error("fit_standardizer dropped every feature (all zero variance)");
  }
  return standardizer;
}

Dataset apply(const Standardizer& standardizer, const Dataset& dataset) {
  Dataset projected = project_features(dataset, standardizer.feature_names);
  for (PlanRecord& record : projected.records) {
    for (std::size_t j = 0; j < record.features.size(); ++j) {
      record.features[j] = (record.features[j] - standardizer.means[j]) / standardizer.sds[j];
    }
  }
  return projected;
}

Dataset invert(const Standardizer& standardizer, const Dataset& dataset) {
  if (dataset.feature_names != standardizer.feature_names) {
    throw Error("invert: dataset does not match the standardizer schema");
  }
  Dataset out = dataset;
  for (PlanRecord& record : out.records) {
    for (std::size_t j = 0; j < record.features.size(); ++j) {
      record.features[j] = record.features[j] * standardizer.sds[j] + standardizer.means[j];
    }
  }
  return out;
}

SynthModel make_synth_model(const SynthConfig& cfg) {
  check_synth_config(cfg);
  const SynthDraws draws = draw_synth(cfg);
  SynthModel model;
  model.weights = draws.weights;
  model.noise_sd = cfg.noise_sd;
  model.bias = tune_bias(cfg, draws);
  return model;
}

Dataset synth_generate(const SynthConfig& cfg) {
  check_synth_config(cfg);
  const SynthDraws draws = draw_synth(cfg);
  const double bias = tune_bias(cfg, draws);

  Dataset dataset;
  dataset.provenance = Provenance::synthetic;
  if (cfg.dim == canonical_feature_names().size()) {
    dataset.feature_names = canonical_feature_names();
  } else {
    for (std::size_t j = 0; j < cfg.dim; ++j) {
      dataset.feature_names.push_back("f" + std::to_string(j + 1));
    }
  }
  dataset.records.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    PlanRecord record;
    const auto row = draws.features.row(i);
    record.features.assign(row.begin(), row.end());
    const double signal =
        std::inner_product(row.begin(), row.end(), draws.weights.begin(), 0.0);
    record.gpr = clamp_gpr(100.0 - softplus(signal + bias) + draws.noise[i]);
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

void write_synth_sidecar(const std::string& path, const SynthConfig& cfg,
                         const SynthModel& model) {
  std::ofstream output(path);
  if (!output) {
    throw Error("cannot write '" + path + "'");
  }
  output << "n=" << cfg.n << '\n';
  output << "unsafe_rate=" << format_double(cfg.unsafe_rate) << '\n';
  output << "noise_sd=" << format_double(cfg.noise_sd) << '\n';
  output << "seed=" << cfg.seed << '\n';
  output << "dim=" << cfg.dim << '\n';
  output << "bias=" << format_double(model.bias) << '\n';
  output << "weights=";
  for (std::size_t j = 0; j < model.weights.size(); ++j) {
    if (j != 0) output << ',';
    output << format_double(model.weights[j]);
  }
  output << '\n';
  if (!output) {
    throw Error("write failed for '" + path + "'");
  }
}

}  // namespace qatriage
