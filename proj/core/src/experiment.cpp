#include "qatriage/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "qatriage/conformal.hpp"
#include "qatriage/error.hpp"
#include "qatriage/format.hpp"
#include "qatriage/training_aware.hpp"

namespace qatriage {

namespace {

constexpr std::uint64_t kShiftSeedOffset = 777;

const char* kMetricsHeader =
    "repeat,section,threshold,sensitivity,specificity,reduction_in_measurement,coverage,"
    "mean_interval_width,unsafe_class_empty,safe_class_empty,n_test";

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::string> split_cells(const std::string& line, char sep) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream stream(line);
  while (std::getline(stream, cell, sep)) cells.push_back(cell);
  if (!line.empty() && line.back() == sep) cells.emplace_back();
  return cells;
}

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t");
  return text.substr(begin, end - begin + 1);
}

double parse_double(const std::string& value, const std::string& key) {
  double out = 0.0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto result = std::from_chars(begin, end, out);
  if (result.ec != std::errc{} || result.ptr != end) {
    throw Error("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& value, const std::string& key) {
  std::uint64_t out = 0;
  const char* begin = value.data();
  const char* end = begin + value.size();
  const auto result = std::from_chars(begin, end, out);
  if (result.ec != std::errc{} || result.ptr != end) {
    throw Error("config key '" + key + "': cannot parse '" + value + "' as a count");
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw Error("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string bool_text(bool value) { return value ? "true" : "false"; }

std::vector<Method> parse_method_list(const std::string& value) {
  std::vector<Method> methods;
  for (const std::string& raw : split_cells(value, ',')) {
    const Method method = parse_method(trim(raw));
    if (std::find(methods.begin(), methods.end(), method) != methods.end()) {
      throw Error("duplicate method '" + method_name(method) + "' in config");
    }
    methods.push_back(method);
  }
  if (methods.empty()) {
    throw Error("config selects no methods");
  }
  return methods;
}

std::string method_list_text(const std::vector<Method>& methods) {
  std::string out;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (i != 0) out += ',';
    out += method_name(methods[i]);
  }
  return out;
}

void validate_config(const ExperimentConfig& config) {
  if (!(config.alpha > 0.0) || !(config.alpha < 1.0)) {
    throw Error("alpha must lie in (0, 1)");
  }
  if (config.ensemble_size == 0) throw Error("ensemble_size must be >= 1");
  if (config.repeats == 0) throw Error("repeats must be >= 1");
  if (config.methods.empty()) throw Error("config selects no methods");
  if (config.shift.enabled && !config.csv_path.empty()) {
    throw Error("distribution shift requires a synthetic data source");
  }
  if (config.warmup_frac < 0.0 || config.warmup_frac >= 1.0) {
    throw Error("warmup.frac must lie in [0, 1)");
  }
}

// Everything one repeat trains and scores on.
struct RepeatData {
  Matrix train_x;
  std::vector<double> train_y;
  Dataset train_b;  // balanced, standardized
  Dataset val_s;    // standardized
  Matrix val_x;
  std::vector<double> val_y;
  Matrix test_x;
  std::vector<double> test_y;
};

RepeatData prepare_repeat(const ExperimentConfig& config, const Dataset& dataset,
                          std::uint64_t seed) {
  Split parts = split(dataset, {config.train_frac, config.val_frac, config.test_frac, seed});
  if (config.shift.enabled) {
    SynthConfig shifted = config.synth;
    shifted.n = config.shift.n_test != 0 ? config.shift.n_test : parts.test.size();
    shifted.unsafe_rate = config.shift.unsafe_rate;
    shifted.noise_sd = config.shift.noise_sd;
    shifted.seed = seed + kShiftSeedOffset;
    parts.test = synth_generate(shifted);
  }
  if (config.feature_selection) {
    const Dataset& basis = config.feature_selection_on_full_data ? dataset : parts.train;
    const std::vector<std::string> names =
        select_features(basis, config.feature_p_threshold, config.safety_threshold);
    if (names.empty()) {
      throw Error("feature selection excluded every feature");
    }
    parts.train = project_features(parts.train, names);
    parts.val = project_features(parts.val, names);
    parts.test = project_features(parts.test, names);
  }
  const Standardizer standardizer = fit_standardizer(parts.train);
  RepeatData data;
  data.train_b = apply(standardizer, parts.train);
  if (config.balance) {
    data.train_b = balance_training(data.train_b, config.safety_threshold, seed);
  }
  data.val_s = apply(standardizer, parts.val);
  const Dataset test_s = apply(standardizer, parts.test);
  data.train_x = feature_matrix(data.train_b);
  data.train_y = labels(data.train_b);
  data.val_x = feature_matrix(data.val_s);
  data.val_y = labels(data.val_s);
  data.test_x = feature_matrix(test_s);
  data.test_y = labels(test_s);
  return data;
}

std::vector<PredictionInterval> hull_over_members(
    const std::vector<std::vector<PredictionInterval>>& members) {
  const std::size_t n = members.front().size();
  std::vector<PredictionInterval> hull(n);
  std::vector<PredictionInterval> column(members.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < members.size(); ++m) {
      column[m] = members[m][i];
    }
    hull[i] = ensemble_aggregate(column);
  }
  return hull;
}

// Trained base ensemble shared by the base, cp, and crc methods. Built on
// first use so its cost lands in the first method that asks for it.
struct BaseModels {
  std::vector<std::vector<double>> val_pred;   // per member
  std::vector<std::vector<double>> test_pred;  // per member
};

// The retrospective sweep needs both classes in the test labels; a
// single-class test set falls back to the prospective threshold so the
// repeat still reports (with the emptiness flag set).
double retrospective_or_default(const std::vector<PredictionInterval>& intervals,
                                const std::vector<double>& test_y, const RiskSpec& risk) {
  bool has_unsafe = false;
  bool has_safe = false;
  for (double y : test_y) {
    (y < risk.safety_threshold ? has_unsafe : has_safe) = true;
  }
  if (!has_unsafe || !has_safe) return risk.safety_threshold;
  return retrospective_threshold(intervals, test_y, risk);
}

void score_interval_method(const std::vector<PredictionInterval>& intervals,
                           const RepeatData& data, const ExperimentConfig& config,
                           Method method, RepeatResult& result) {
  const RiskSpec risk = config.risk_spec();
  result.prospective[method] =
      compute_metrics(intervals, data.test_y, config.safety_threshold, risk);
  const double threshold = retrospective_or_default(intervals, data.test_y, risk);
  result.retrospective[method] = compute_metrics(intervals, data.test_y, threshold, risk);
}

void run_repeat(const ExperimentConfig& config, const Dataset& dataset, RepeatResult& result) {
  const RepeatData data = prepare_repeat(config, dataset, result.seed);
  const RiskSpec risk = config.risk_spec();
  const std::vector<double> grid = config.lambda_grid.make();

  std::optional<BaseModels> base_models;
  const auto ensure_base_models = [&]() -> const BaseModels& {
    if (!base_models) {
      base_models.emplace();
      for (std::size_t m = 0; m < config.ensemble_size; ++m) {
        TrainConfig tc = config.train;
        tc.seed = config.master_seed + m;
        tc.objective = Objective::mse();
        const MlpParams params = train(data.train_x, data.train_y, tc);
        base_models->val_pred.push_back(predict(params, data.val_x));
        base_models->test_pred.push_back(predict(params, data.test_x));
      }
    }
    return *base_models;
  };

  const auto loop_config = [&](std::size_t member) {
    LoopConfig lc;
    lc.base = config.train;
    lc.base.seed = config.master_seed + member;
    lc.spec = risk;
    lc.lambda_grid = grid;
    lc.warmup_epochs = config.warmup_epochs();
    lc.recalibrate = config.recalibrate;
    return lc;
  };

  for (Method method : config.methods) {
    const auto start = std::chrono::steady_clock::now();
    switch (method) {
      case Method::base: {
        const BaseModels& models = ensure_base_models();
        std::vector<double> point(data.test_y.size(), 0.0);
        for (const std::vector<double>& member : models.test_pred) {
          for (std::size_t i = 0; i < point.size(); ++i) point[i] += member[i];
        }
        for (double& p : point) p /= static_cast<double>(config.ensemble_size);
        result.prospective[method] =
            compute_point_metrics(point, data.test_y, config.safety_threshold, risk);
        // The retrospective sweep sees the point predictions as degenerate
        // intervals; decisions are identical to thresholding the points.
        std::vector<PredictionInterval> degenerate;
        degenerate.reserve(point.size());
        for (double p : point) degenerate.push_back(split_cp_interval(p, 0.0));
        const double threshold = retrospective_or_default(degenerate, data.test_y, risk);
        result.retrospective[method] =
            compute_point_metrics(point, data.test_y, threshold, risk);
        break;
      }
      case Method::cp: {
        const BaseModels& models = ensure_base_models();
        std::vector<std::vector<PredictionInterval>> members(config.ensemble_size);
        for (std::size_t m = 0; m < config.ensemble_size; ++m) {
          const double width =
              conformal_quantile(nonconformity(models.val_pred[m], data.val_y), config.alpha);
          members[m].reserve(data.test_y.size());
          for (double p : models.test_pred[m]) {
            members[m].push_back(split_cp_interval(p, width));
          }
        }
        score_interval_method(hull_over_members(members), data, config, method, result);
        break;
      }
      case Method::crc: {
        const BaseModels& models = ensure_base_models();
        std::vector<std::vector<PredictionInterval>> members(config.ensemble_size);
        for (std::size_t m = 0; m < config.ensemble_size; ++m) {
          const CrcCalibration calibration =
              crc_select_lambda(models.val_pred[m], data.val_y, risk, grid);
          members[m].reserve(data.test_y.size());
          for (double p : models.test_pred[m]) {
            members[m].push_back(crc_interval(p, calibration));
          }
        }
        score_interval_method(hull_over_members(members), data, config, method, result);
        break;
      }
      case Method::cqr: {
        std::vector<std::vector<PredictionInterval>> members(config.ensemble_size);
        for (std::size_t m = 0; m < config.ensemble_size; ++m) {
          TrainConfig tc = config.train;
          tc.seed = config.master_seed + m;
          const auto [low_params, high_params] =
              train_quantile_pair(data.train_x, data.train_y, tc, config.alpha);
          const double i_low = conformal_quantile(
              nonconformity(predict(low_params, data.val_x), data.val_y), config.alpha);
          const double i_high = conformal_quantile(
              nonconformity(predict(high_params, data.val_x), data.val_y), config.alpha);
          const std::vector<double> test_low = predict(low_params, data.test_x);
          const std::vector<double> test_high = predict(high_params, data.test_x);
          members[m].reserve(data.test_y.size());
          for (std::size_t i = 0; i < data.test_y.size(); ++i) {
            members[m].push_back(cqr_interval(test_low[i], test_high[i], i_low, i_high));
          }
        }
        score_interval_method(hull_over_members(members), data, config, method, result);
        break;
      }
      case Method::ct:
      case Method::ta_crc: {
        std::vector<std::vector<PredictionInterval>> members(config.ensemble_size);
        for (std::size_t m = 0; m < config.ensemble_size; ++m) {
          const LoopConfig lc = loop_config(m);
          const TrainedIntervalModel model = method == Method::ct
                                                 ? conformal_train(data.train_b, data.val_s, lc)
                                                 : crc_aware_train(data.train_b, data.val_s, lc);
          members[m] = predict_with_fixed_interval(model, data.test_x);
        }
        score_interval_method(hull_over_members(members), data, config, method, result);
        break;
      }
    }
    result.method_seconds[method] = seconds_since(start);
  }
}

std::string metric_cell(const AggregateStat& stat) {
  std::string cell = format_fixed(stat.mean, 3);
  if (stat.std) {
    cell += " ± ";
    cell += format_fixed(*stat.std, 3);
  }
  return cell;
}

std::string optional_cell(const std::optional<AggregateStat>& stat) {
  return stat ? metric_cell(*stat) : std::string("NA");
}

// Column width in terminal cells: every non-ASCII character here is the
// two-byte sign U+00B1, which renders one column wide.
std::size_t display_width(const std::string& text) {
  std::size_t width = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++width;
  }
  return width;
}

std::string render_rows(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], display_width(row[c]));
    }
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c != 0) out += " | ";
      out += row[c];
      if (c + 1 < row.size()) {
        out.append(widths[c] - display_width(row[c]), ' ');
      }
    }
    out += '\n';
  }
  return out;
}

std::string csv_optional(const std::optional<double>& value) {
  return value ? format_double(*value) : std::string("NA");
}

MetricsReport report_from_cells(const std::vector<std::string>& cells, const std::string& path,
                                std::size_t line) {
  MetricsReport report;
  const auto num = [&](const std::string& text) {
    return parse_double(text, path + ":" + std::to_string(line));
  };
  report.threshold_used = num(cells[2]);
  report.sensitivity = num(cells[3]);
  report.specificity = num(cells[4]);
  report.reduction_in_measurement = num(cells[5]);
  if (cells[6] != "NA") report.coverage = num(cells[6]);
  if (cells[7] != "NA") report.mean_interval_width = num(cells[7]);
  report.unsafe_class_empty = cells[8] == "1";
  report.safe_class_empty = cells[9] == "1";
  report.n_test = static_cast<std::size_t>(parse_uint(cells[10], path));
  return report;
}

}  // namespace

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {Method::base, Method::cp,  Method::cqr,
                                              Method::crc,  Method::ct, Method::ta_crc};
  return methods;
}

std::string method_name(Method method) {
  switch (method) {
    case Method::base: return "base";
    case Method::cp: return "cp";
    case Method::cqr: return "cqr";
    case Method::crc: return "crc";
    case Method::ct: return "ct";
    case Method::ta_crc: return "ta_crc";
  }
  throw Error("unreachable method");
}

Method parse_method(const std::string& name) {
  for (Method method : all_methods()) {
    if (method_name(method) == name) return method;
  }
  throw Error("unknown method '" + name + "'");
}

std::vector<double> LambdaGridSpec::make() const { return make_lambda_grid(min, max, points); }

std::size_t ExperimentConfig::warmup_epochs() const {
  const auto raw = static_cast<std::size_t>(warmup_frac * static_cast<double>(train.epochs));
  return train.epochs == 0 ? 0 : std::min(raw, train.epochs - 1);
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig config;
  std::optional<double> cqr_low;
  std::optional<double> cqr_high;
  std::vector<std::string> seen;

  std::stringstream stream(text);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(stream, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config", line_number, "expected key=value, got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ParseError("config", line_number, "duplicate key '" + key + "'");
    }
    seen.push_back(key);

    if (key == "data.csv") {
      config.csv_path = value;
    } else if (key == "synth.n") {
      config.synth.n = parse_uint(value, key);
    } else if (key == "synth.unsafe_rate") {
      config.synth.unsafe_rate = parse_double(value, key);
    } else if (key == "synth.noise_sd") {
      config.synth.noise_sd = parse_double(value, key);
    } else if (key == "synth.seed") {
      config.synth.seed = parse_uint(value, key);
    } else if (key == "synth.dim") {
      config.synth.dim = parse_uint(value, key);
    } else if (key == "alpha") {
      config.alpha = parse_double(value, key);
    } else if (key == "safety_threshold") {
      config.safety_threshold = parse_double(value, key);
    } else if (key == "methods") {
      config.methods = parse_method_list(value);
    } else if (key == "ensemble_size") {
      config.ensemble_size = parse_uint(value, key);
    } else if (key == "repeats") {
      config.repeats = parse_uint(value, key);
    } else if (key == "split.train") {
      config.train_frac = parse_double(value, key);
    } else if (key == "split.val") {
      config.val_frac = parse_double(value, key);
    } else if (key == "split.test") {
      config.test_frac = parse_double(value, key);
    } else if (key == "train.hidden") {
      config.train.hidden = parse_uint(value, key);
    } else if (key == "train.activation") {
      if (value == "sigmoid") {
        config.train.activation = Activation::sigmoid;
      } else if (value == "relu") {
        config.train.activation = Activation::relu;
      } else {
        throw Error("config key 'train.activation': unknown activation '" + value + "'");
      }
    } else if (key == "train.epochs") {
      config.train.epochs = parse_uint(value, key);
    } else if (key == "train.learning_rate") {
      config.train.learning_rate = parse_double(value, key);
    } else if (key == "train.minibatch") {
      config.train.minibatch_size = parse_uint(value, key);
    } else if (key == "lambda_grid.min") {
      config.lambda_grid.min = parse_double(value, key);
    } else if (key == "lambda_grid.max") {
      config.lambda_grid.max = parse_double(value, key);
    } else if (key == "lambda_grid.points") {
      config.lambda_grid.points = parse_uint(value, key);
    } else if (key == "cqr.low_percentile") {
      cqr_low = parse_double(value, key);
    } else if (key == "cqr.high_percentile") {
      cqr_high = parse_double(value, key);
    } else if (key == "feature_selection.enabled") {
      config.feature_selection = parse_bool(value, key);
    } else if (key == "feature_selection.p") {
      config.feature_p_threshold = parse_double(value, key);
    } else if (key == "feature_selection.on_full_data") {
      config.feature_selection_on_full_data = parse_bool(value, key);
    } else if (key == "balance.enabled") {
      config.balance = parse_bool(value, key);
    } else if (key == "warmup.frac") {
      config.warmup_frac = parse_double(value, key);
    } else if (key == "recalibrate") {
      config.recalibrate = parse_bool(value, key);
    } else if (key == "master_seed") {
      config.master_seed = parse_uint(value, key);
    } else if (key == "output_dir") {
      config.output_dir = value;
    } else if (key == "shift.enabled") {
      config.shift.enabled = parse_bool(value, key);
    } else if (key == "shift.unsafe_rate") {
      config.shift.unsafe_rate = parse_double(value, key);
    } else if (key == "shift.noise_sd") {
      config.shift.noise_sd = parse_double(value, key);
    } else if (key == "shift.n_test") {
      config.shift.n_test = parse_uint(value, key);
    } else {
      throw ParseError("config", line_number, "unknown key '" + key + "'");
    }
  }

  // The quantile-head percentiles are derived from alpha; explicit values
  // must agree with it.
  if (cqr_low && std::abs(*cqr_low - config.cqr_low_percentile()) > 1e-9) {
    throw Error("cqr.low_percentile must equal 100*alpha/2 = " +
                format_double(config.cqr_low_percentile()));
  }
  if (cqr_high && std::abs(*cqr_high - config.cqr_high_percentile()) > 1e-9) {
    throw Error("cqr.high_percentile must equal 100*(1-alpha/2) = " +
                format_double(config.cqr_high_percentile()));
  }
  validate_config(config);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream input(path);
  if (!input) {
    throw Error("cannot open '" + path + "'");
  }
  std::stringstream buffer;
  buffer << input.rdbuf();
  return parse_config_text(buffer.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  const auto emit = [&out](const std::string& key, const std::string& value) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  };
  emit("data.csv", config.csv_path);
  emit("synth.n", std::to_string(config.synth.n));
  emit("synth.unsafe_rate", format_double(config.synth.unsafe_rate));
  emit("synth.noise_sd", format_double(config.synth.noise_sd));
  emit("synth.seed", std::to_string(config.synth.seed));
  emit("synth.dim", std::to_string(config.synth.dim));
  emit("alpha", format_double(config.alpha));
  emit("safety_threshold", format_double(config.safety_threshold));
  emit("methods", method_list_text(config.methods));
  emit("ensemble_size", std::to_string(config.ensemble_size));
  emit("repeats", std::to_string(config.repeats));
  emit("split.train", format_double(config.train_frac));
  emit("split.val", format_double(config.val_frac));
  emit("split.test", format_double(config.test_frac));
  emit("train.hidden", std::to_string(config.train.hidden));
  emit("train.activation",
       config.train.activation == Activation::sigmoid ? "sigmoid" : "relu");
  emit("train.epochs", std::to_string(config.train.epochs));
  emit("train.learning_rate", format_double(config.train.learning_rate));
  emit("train.minibatch", std::to_string(config.train.minibatch_size));
  emit("lambda_grid.min", format_double(config.lambda_grid.min));
  emit("lambda_grid.max", format_double(config.lambda_grid.max));
  emit("lambda_grid.points", std::to_string(config.lambda_grid.points));
  emit("cqr.low_percentile", format_double(config.cqr_low_percentile()));
  emit("cqr.high_percentile", format_double(config.cqr_high_percentile()));
  emit("feature_selection.enabled", bool_text(config.feature_selection));
  emit("feature_selection.p", format_double(config.feature_p_threshold));
  emit("feature_selection.on_full_data", bool_text(config.feature_selection_on_full_data));
  emit("balance.enabled", bool_text(config.balance));
  emit("warmup.frac", format_double(config.warmup_frac));
  emit("recalibrate", bool_text(config.recalibrate));
  emit("master_seed", std::to_string(config.master_seed));
  emit("output_dir", config.output_dir);
  emit("shift.enabled", bool_text(config.shift.enabled));
  emit("shift.unsafe_rate", format_double(config.shift.unsafe_rate));
  emit("shift.noise_sd", format_double(config.shift.noise_sd));
  emit("shift.n_test", std::to_string(config.shift.n_test));
  return out;
}

RunArtifact run_experiment(const ExperimentConfig& config) {
  validate_config(config);
  const Dataset dataset =
      config.csv_path.empty() ? synth_generate(config.synth) : load_csv(config.csv_path);

  RunArtifact artifact;
  artifact.config = config;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    RepeatResult result;
    result.repeat = r;
    result.seed = config.master_seed * 1000 + r;
    const auto start = std::chrono::steady_clock::now();
    try {
      run_repeat(config, dataset, result);
    } catch (const std::exception& e) {
      result.failed = true;
      result.error = e.what();
      result.prospective.clear();
      result.retrospective.clear();
    }
    result.seconds = seconds_since(start);
    artifact.repeats.push_back(std::move(result));
  }

  std::vector<const RepeatResult*> ok;
  for (const RepeatResult& result : artifact.repeats) {
    if (!result.failed) ok.push_back(&result);
  }
  if (ok.empty()) {
    throw Error("every repeat failed; first error: " + artifact.repeats.front().error);
  }
  for (Method method : config.methods) {
    MethodSummary summary;
    summary.method = method;
    std::vector<MetricsReport> pros;
    std::vector<MetricsReport> retro;
    for (const RepeatResult* result : ok) {
      pros.push_back(result->prospective.at(method));
      retro.push_back(result->retrospective.at(method));
    }
    summary.prospective = aggregate(pros);
    summary.retrospective = aggregate(retro);
    artifact.summaries.push_back(std::move(summary));
  }
  return artifact;
}

std::string render_table(const std::vector<MethodSummary>& summaries, bool retrospective) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Method", "Sensitivity", "Specificity", "Reduction in Measurement",
                  "Coverage", "Interval Width"});
  for (const MethodSummary& summary : summaries) {
    const AggregateReport& report = retrospective ? summary.retrospective : summary.prospective;
    rows.push_back({method_name(summary.method), metric_cell(report.sensitivity),
                    metric_cell(report.specificity),
                    metric_cell(report.reduction_in_measurement),
                    optional_cell(report.coverage), optional_cell(report.mean_interval_width)});
  }
  return render_rows(rows);
}

void write_run_outputs(const RunArtifact& artifact, const std::string& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) {
    throw Error("cannot create output directory '" + directory + "': " + ec.message());
  }
  const auto open = [&](const std::string& name) {
    std::ofstream file(directory + "/" + name);
    if (!file) {
      throw Error("cannot write '" + directory + "/" + name + "'");
    }
    return file;
  };

  {
    std::ofstream file = open("run_config.txt");
    file << serialize_config(artifact.config);
  }

  for (Method method : artifact.config.methods) {
    std::ofstream file = open("metrics_" + method_name(method) + ".csv");
    file << kMetricsHeader << '\n';
    for (const RepeatResult& result : artifact.repeats) {
      if (result.failed) continue;
      for (const bool retro : {false, true}) {
        const MetricsReport& report =
            retro ? result.retrospective.at(method) : result.prospective.at(method);
        file << result.repeat << ',' << (retro ? "retrospective" : "prospective") << ','
             << format_double(report.threshold_used) << ',' << format_double(report.sensitivity)
             << ',' << format_double(report.specificity) << ','
             << format_double(report.reduction_in_measurement) << ','
             << csv_optional(report.coverage) << ',' << csv_optional(report.mean_interval_width)
             << ',' << (report.unsafe_class_empty ? 1 : 0) << ','
             << (report.safe_class_empty ? 1 : 0) << ',' << report.n_test << '\n';
      }
    }
  }

  std::string failures;
  for (const RepeatResult& result : artifact.repeats) {
    if (result.failed) {
      failures += "# repeat " + std::to_string(result.repeat) + " failed: " + result.error + "\n";
    }
  }
  {
    std::ofstream file = open("table_prospective.txt");
    file << render_table(artifact.summaries, false) << failures;
  }
  {
    std::ofstream file = open("table_retrospective.txt");
    file << render_table(artifact.summaries, true) << failures;
  }
}

RunArtifact load_run_outputs(const std::string& directory) {
  RunArtifact artifact;
  artifact.config = load_config(directory + "/run_config.txt");

  std::map<std::size_t, RepeatResult> repeats;
  for (Method method : artifact.config.methods) {
    const std::string path = directory + "/metrics_" + method_name(method) + ".csv";
    std::ifstream file(path);
    if (!file) {
      throw Error("cannot open '" + path + "'");
    }
    std::string line;
    if (!std::getline(file, line) || trim(line) != kMetricsHeader) {
      throw ParseError(path, 1, "unexpected metrics header");
    }
    std::size_t line_number = 1;
    while (std::getline(file, line)) {
      ++line_number;
      if (trim(line).empty()) continue;
      const std::vector<std::string> cells = split_cells(line, ',');
      if (cells.size() != 11) {
        throw ParseError(path, line_number, "expected 11 cells");
      }
      const auto repeat = static_cast<std::size_t>(parse_uint(cells[0], path));
      RepeatResult& result = repeats[repeat];
      result.repeat = repeat;
      const MetricsReport report = report_from_cells(cells, path, line_number);
      if (cells[1] == "prospective") {
        result.prospective[method] = report;
      } else if (cells[1] == "retrospective") {
        result.retrospective[method] = report;
      } else {
        throw ParseError(path, line_number, "unknown section '" + cells[1] + "'");
      }
    }
  }

  for (auto& [repeat, result] : repeats) {
    result.seed = artifact.config.master_seed * 1000 + repeat;
    artifact.repeats.push_back(std::move(result));
  }
  for (Method method : artifact.config.methods) {
    MethodSummary summary;
    summary.method = method;
    std::vector<MetricsReport> pros;
    std::vector<MetricsReport> retro;
    for (const RepeatResult& result : artifact.repeats) {
      pros.push_back(result.prospective.at(method));
      retro.push_back(result.retrospective.at(method));
    }
    summary.prospective = aggregate(pros);
    summary.retrospective = aggregate(retro);
    artifact.summaries.push_back(std::move(summary));
  }
  return artifact;
}

std::string merge_report(const std::vector<RunArtifact>& artifacts) {
  if (artifacts.empty()) {
    throw Error("merge_report needs at least one artifact");
  }
  const double alpha = artifacts.front().config.alpha;
  const double threshold = artifacts.front().config.safety_threshold;
  for (const RunArtifact& artifact : artifacts) {
    if (artifact.config.alpha != alpha || artifact.config.safety_threshold != threshold) {
      throw Error("artifacts disagree on alpha or safety threshold; refusing to merge");
    }
  }

  // Pool the per-repeat reports method by method, in first-appearance order.
  std::vector<Method> order;
  std::map<Method, std::vector<MetricsReport>> pros;
  std::map<Method, std::vector<MetricsReport>> retro;
  for (const RunArtifact& artifact : artifacts) {
    for (Method method : artifact.config.methods) {
      if (std::find(order.begin(), order.end(), method) == order.end()) {
        order.push_back(method);
      }
      for (const RepeatResult& result : artifact.repeats) {
        if (result.failed) continue;
        pros[method].push_back(result.prospective.at(method));
        retro[method].push_back(result.retrospective.at(method));
      }
    }
  }
  std::vector<MethodSummary> summaries;
  for (Method method : order) {
    MethodSummary summary;
    summary.method = method;
    summary.prospective = aggregate(pros.at(method));
    summary.retrospective = aggregate(retro.at(method));
    summaries.push_back(std::move(summary));
  }

  std::string out;
  out += "== Prospective (threshold " + format_double(threshold) + ") ==\n";
  out += render_table(summaries, false);
  out += "\n== Retrospective ==\n";
  out += render_table(summaries, true);
  return out;
}

GuaranteeCheck check_guarantees(Method method, std::size_t trials, const SynthConfig& generator,
                                double alpha, std::size_t n_cal, std::size_t n_test) {
  if (method != Method::cp && method != Method::crc) {
    throw Error("check-guarantees supports methods cp and crc only");
  }
  if (trials < 100) {
    throw Error("check-guarantees needs trials >= 100");
  }
  if (n_cal == 0 || n_test == 0) {
    throw Error("check-guarantees needs n_cal and n_test >= 1");
  }
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw Error("alpha must lie in (0, 1)");
  }

  const RiskSpec spec{95.0, alpha, 1.0};
  const std::vector<double> grid = default_lambda_grid();
  GuaranteeCheck check;
  check.method = method;
  check.trials = trials;
  check.n_cal = n_cal;
  check.n_test = n_test;
  check.alpha = alpha;

  std::vector<double> per_trial(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    SynthConfig cfg = generator;
    cfg.n = n_cal + n_test;
    cfg.seed = generator.seed + t;
    const Dataset dataset = synth_generate(cfg);
    const SynthModel model = make_synth_model(cfg);

    // The fixed predictor is the generator's own mean function: no training
    // touches the draw, so calibration and test records stay exchangeable.
    std::vector<double> predictions(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      predictions[i] = model.mean_gpr(dataset.records[i].features);
    }
    const std::vector<double> ys = labels(dataset);
    const std::span<const double> cal_pred(predictions.data(), n_cal);
    const std::span<const double> cal_y(ys.data(), n_cal);
    const std::span<const double> test_pred(predictions.data() + n_cal, n_test);
    const std::span<const double> test_y(ys.data() + n_cal, n_test);

    if (method == Method::cp) {
      const double width = conformal_quantile(nonconformity(cal_pred, cal_y), alpha);
      std::size_t covered = 0;
      for (std::size_t i = 0; i < n_test; ++i) {
        if (split_cp_interval(test_pred[i], width).contains(test_y[i])) ++covered;
      }
      per_trial[t] = static_cast<double>(covered) / static_cast<double>(n_test);
    } else {
      const std::vector<double> curve = crc_risk_curve(cal_pred, cal_y, spec, grid);
      for (std::size_t g = 1; g < curve.size(); ++g) {
        if (curve[g] > curve[g - 1]) {
          check.curve_monotone = false;
        }
      }
      const CrcCalibration calibration = crc_select_lambda(cal_pred, cal_y, spec, grid);
      std::vector<PredictionInterval> intervals;
      intervals.reserve(n_test);
      for (double p : test_pred) intervals.push_back(crc_interval(p, calibration));
      per_trial[t] = empirical_risk(intervals, test_y, spec);
    }
  }

  double mean = 0.0;
  for (double v : per_trial) mean += v;
  mean /= static_cast<double>(trials);
  double ss = 0.0;
  for (double v : per_trial) {
    const double d = v - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(trials - 1));
  check.mean_value = mean;
  check.std_error = sd / std::sqrt(static_cast<double>(trials));

  if (method == Method::cp) {
    check.lower_bound = 1.0 - alpha;
    check.upper_bound = 1.0 - alpha + 2.0 / (static_cast<double>(n_cal) + 1.0);
    check.pass = mean >= check.lower_bound - 3.0 * check.std_error &&
                 mean <= check.upper_bound + 3.0 * check.std_error;
  } else {
    check.upper_bound = alpha;
    check.pass = check.curve_monotone && mean <= alpha + 3.0 * check.std_error;
  }
  return check;
}

std::string format_guarantees(const GuaranteeCheck& check) {
  std::string out;
  const auto emit = [&out](const std::string& key, const std::string& value) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  };
  emit("method", method_name(check.method));
  emit("trials", std::to_string(check.trials));
  emit("n_cal", std::to_string(check.n_cal));
  emit("n_test", std::to_string(check.n_test));
  emit("alpha", format_double(check.alpha));
  if (check.method == Method::cp) {
    emit("mean_coverage", format_double(check.mean_value));
    emit("std_error", format_double(check.std_error));
    emit("lower_bound", format_double(check.lower_bound));
    emit("upper_bound", format_double(check.upper_bound));
  } else {
    emit("mean_risk", format_double(check.mean_value));
    emit("std_error", format_double(check.std_error));
    emit("risk_bound", format_double(check.upper_bound));
    emit("curve_monotone", bool_text(check.curve_monotone));
  }
  emit("result", check.pass ? "PASS" : "FAIL");
  return out;
}

}  // namespace qatriage
