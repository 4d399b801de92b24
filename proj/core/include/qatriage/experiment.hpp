#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qatriage/data.hpp"
#include "qatriage/evaluation.hpp"
#include "qatriage/mlp.hpp"

namespace qatriage {

enum class Method { base, cp, cqr, crc, ct, ta_crc };

const std::vector<Method>& all_methods();
std::string method_name(Method method);
Method parse_method(const std::string& name);

struct LambdaGridSpec {
  double min = 0.0;
  double max = 2.0;
  std::size_t points = 201;

  std::vector<double> make() const;
};

/// Distribution-shift mode: the test split is discarded and replaced by a
/// fresh draw from a perturbed generator. Synthetic sources only.
struct ShiftSpec {
  bool enabled = false;
  double unsafe_rate = 0.3;
  double noise_sd = 2.0;
  std::size_t n_test = 0;  // 0 keeps the size of the discarded split
};

struct ExperimentConfig {
  std::string csv_path;  // non-empty switches the source from synth to CSV
  SynthConfig synth{2000, 0.1, 2.0, 7, 12};

  double alpha = 0.1;
  double safety_threshold = 95.0;
  std::vector<Method> methods = all_methods();
  std::size_t ensemble_size = 5;
  std::size_t repeats = 3;

  double train_frac = 0.6;
  double val_frac = 0.2;
  double test_frac = 0.2;

  TrainConfig train;  // hidden 100, sigmoid, 1500 epochs, lr 0.01

  LambdaGridSpec lambda_grid;
  bool feature_selection = false;
  double feature_p_threshold = 0.05;
  bool feature_selection_on_full_data = false;
  bool balance = true;
  double warmup_frac = 0.1;  // fraction of epochs excluded from the width average
  bool recalibrate = false;

  std::uint64_t master_seed = 0;
  std::string output_dir = ".";
  ShiftSpec shift;

  /// Quantile-head percentiles are a function of alpha: the heads sit at
  /// alpha/2 and 1 - alpha/2.
  double cqr_low_percentile() const { return 100.0 * alpha / 2.0; }
  double cqr_high_percentile() const { return 100.0 * (1.0 - alpha / 2.0); }
  RiskSpec risk_spec() const { return {safety_threshold, alpha, 1.0}; }
  std::size_t warmup_epochs() const;
};

/// Strict flat key=value parsing; '#' starts a comment line. Unknown keys,
/// malformed values, and cqr percentiles inconsistent with alpha all error.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

struct RepeatResult {
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::map<Method, MetricsReport> prospective;
  std::map<Method, MetricsReport> retrospective;
  std::map<Method, double> method_seconds;
  double seconds = 0.0;
};

struct MethodSummary {
  Method method = Method::base;
  AggregateReport prospective;
  AggregateReport retrospective;
};

struct RunArtifact {
  ExperimentConfig config;
  std::vector<RepeatResult> repeats;
  std::vector<MethodSummary> summaries;  // aggregated over successful repeats
};

/// Runs the full comparison pipeline: per repeat, split / select / scale /
/// balance, train the requested methods as an ensemble, hull-aggregate the
/// member intervals, and score both prospectively (threshold 95) and
/// retrospectively. A failed repeat is recorded and skipped; the run only
/// throws when every repeat fails.
RunArtifact run_experiment(const ExperimentConfig& config);

/// metrics_<method>.csv per method, table_prospective.txt,
/// table_retrospective.txt, and run_config.txt. Numeric cells are shortest
/// round-trip decimals, so identical artifacts serialize identically.
void write_run_outputs(const RunArtifact& artifact, const std::string& directory);

/// Rebuilds an artifact (config + per-repeat reports) from write_run_outputs
/// files, enough to merge and re-render tables.
RunArtifact load_run_outputs(const std::string& directory);

/// Pools per-repeat reports method-by-method across artifacts and renders
/// one merged comparison table (prospective and retrospective sections).
/// Artifacts must agree on alpha and safety threshold.
std::string merge_report(const std::vector<RunArtifact>& artifacts);

std::string render_table(const std::vector<MethodSummary>& summaries, bool retrospective);

struct GuaranteeCheck {
  Method method = Method::cp;  // cp or crc
  std::size_t trials = 0;
  std::size_t n_cal = 0;
  std::size_t n_test = 0;
  double alpha = 0.1;
  double mean_value = 0.0;  // coverage for cp, risk for crc
  double std_error = 0.0;
  double lower_bound = 0.0;  // cp only: 1 - alpha
  double upper_bound = 0.0;  // cp: 1 - alpha + 2/(n_cal+1); crc: alpha
  bool curve_monotone = true;  // crc only: r-hat non-increasing in every trial
  bool pass = false;
};

/// Monte-Carlo validation of the marginal guarantees with a fixed predictor
/// (the generator's own mean function), which keeps calibration and test
/// draws exactly exchangeable. Each trial draws n_cal + n_test fresh records.
GuaranteeCheck check_guarantees(Method method, std::size_t trials, const SynthConfig& generator,
                                double alpha, std::size_t n_cal, std::size_t n_test);

std::string format_guarantees(const GuaranteeCheck& check);

}  // namespace qatriage
