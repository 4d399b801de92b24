#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qatriage/matrix.hpp"

namespace qatriage {

/// One QA plan: complexity features plus the measured gamma passing rate.
struct PlanRecord {
  std::vector<double> features;
  double gpr = 0.0;  // percent, in [0, 100]
};

enum class Provenance { csv, synthetic };

struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<PlanRecord> records;
  Provenance provenance = Provenance::csv;

  std::size_t size() const { return records.size(); }
  std::size_t dim() const { return feature_names.size(); }
};

/// Fractions must each be positive and sum to 1 within 1e-9.
struct SplitSpec {
  double train_frac = 0.6;
  double val_frac = 0.2;
  double test_frac = 0.2;
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Per-feature training statistics. Zero-variance features are dropped at
/// fit time and listed in `dropped`.
struct Standardizer {
  std::vector<std::string> feature_names;  // retained features, schema order
  std::vector<double> means;
  std::vector<double> sds;  // sample sd (n-1), > 0 for every retained feature
  std::vector<std::string> dropped;
};

struct SynthConfig {
  std::size_t n = 0;
  double unsafe_rate = 0.1;  // in (0, 1)
  double noise_sd = 1.0;     // >= 0; 0 is the degenerate noiseless case
  std::uint64_t seed = 0;
  std::size_t dim = 12;
};

/// The generator's ground truth, reconstructible from a SynthConfig. The
/// noiseless mean function doubles as a fixed predictor in guarantee checks.
struct SynthModel {
  std::vector<double> weights;
  double bias = 0.0;
  double noise_sd = 0.0;

  /// clamp(100 - softplus(weights . x + bias), 0, 100)
  double mean_gpr(std::span<const double> x) const;
};

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// The 12 plan-complexity feature names accepted verbatim on ingestion and
/// emitted by the synthetic generator at dim == 12.
const std::vector<std::string>& canonical_feature_names();

/// Strict CSV ingestion: header row of feature columns plus `gpr`, decimal
/// point `.`, no thousands separators. Any malformed cell or out-of-range
/// gpr raises ParseError carrying the 1-based line number.
Dataset load_csv(const std::string& path);

/// Writes the same schema load_csv reads, feature columns then `gpr`.
/// Doubles are rendered shortest-round-trip so a load/save cycle is lossless.
void save_csv(const std::string& path, const Dataset& dataset);

Matrix feature_matrix(const Dataset& dataset);
std::vector<double> labels(const Dataset& dataset);

/// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
/// Requires at least two observations per sample and at least one sample
/// with positive variance.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// Per-feature Welch test between the unsafe (gpr < safety_threshold) and
/// safe classes; keeps features with p < threshold, in schema order. A
/// feature constant within both classes is kept only if the two class means
/// differ (the test is degenerate but the separation is perfect).
std::vector<std::string> select_features(const Dataset& dataset, double threshold = 0.05,
                                         double safety_threshold = 95.0);

/// Restricts the dataset to `names`, in the order given. Unknown names error.
Dataset project_features(const Dataset& dataset, const std::vector<std::string>& names);

/// Seeded shuffle then partition; train/val sizes round to nearest, test
/// takes the remainder. Errors if any part is empty.
Split split(const Dataset& dataset, const SplitSpec& spec);

/// Oversamples the minority class (by safety_threshold) with replacement
/// until class counts match. Already balanced data is returned unchanged.
/// Only ever applied to training data; calibration and test stay raw.
Dataset balance_training(const Dataset& train, double safety_threshold, std::uint64_t seed);

Standardizer fit_standardizer(const Dataset& train);
Dataset apply(const Standardizer& standardizer, const Dataset& dataset);
/// Undoes apply() on the retained features; dropped columns are gone.
Dataset invert(const Standardizer& standardizer, const Dataset& dataset);

/// Rebuilds the exact (weights, bias) synth_generate(cfg) uses, without
/// materializing the dataset.
SynthModel make_synth_model(const SynthConfig& cfg);

/// Draws features from a seeded standard normal and labels from the model
/// plus Gaussian noise, clamped to [0, 100]. The bias is tuned by bisection
/// (at most 100 iterations) so the empirical unsafe count lands within
/// +-20% relative of cfg.unsafe_rate; failure to land raises an error.
/// The bias depends on the sample only through a permutation-invariant
/// count, so the records stay exchangeable.
Dataset synth_generate(const SynthConfig& cfg);

/// key=value metadata (config and fitted generator parameters) for a
/// generated dataset.
void write_synth_sidecar(const std::string& path, const SynthConfig& cfg,
                         const SynthModel& model);

}  // namespace qatriage
