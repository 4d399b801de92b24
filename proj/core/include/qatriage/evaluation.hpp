#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qatriage/conformal.hpp"

namespace qatriage {

enum class TriageDecision { safe_skip_measurement, needs_measurement };

/// Clinical metrics for one run. The unsafe class drives sensitivity and the
/// safe class specificity; when a class is empty the rate is reported as 1.0
/// and the matching flag is set. Point-prediction baselines have no interval,
/// so coverage and width stay empty there.
struct MetricsReport {
  double sensitivity = 1.0;
  double specificity = 1.0;
  double reduction_in_measurement = 0.0;
  std::optional<double> coverage;
  std::optional<double> mean_interval_width;
  bool unsafe_class_empty = false;
  bool safe_class_empty = false;
  std::size_t n_test = 0;
  double threshold_used = 95.0;
};

struct AggregateStat {
  double mean = 0.0;
  std::optional<double> std;  // n-1 denominator; empty for a single run
};

struct AggregateReport {
  AggregateStat sensitivity;
  AggregateStat specificity;
  AggregateStat reduction_in_measurement;
  std::optional<AggregateStat> coverage;
  std::optional<AggregateStat> mean_interval_width;
  std::size_t runs = 0;
};

/// safe_skip_measurement iff interval.low > threshold, strictly; the
/// boundary stays conservative.
TriageDecision triage(const PredictionInterval& interval, double threshold);

/// Metrics over a test set. Classes are defined by spec.safety_threshold;
/// decisions by `threshold`. Coverage counts labels inside their interval,
/// bounds inclusive.
MetricsReport compute_metrics(std::span<const PredictionInterval> intervals,
                              std::span<const double> labels, double threshold,
                              const RiskSpec& spec);

/// Same metrics for a point predictor: safe iff prediction > threshold.
/// Coverage and width are left empty.
MetricsReport compute_point_metrics(std::span<const double> predictions,
                                    std::span<const double> labels, double threshold,
                                    const RiskSpec& spec);

/// The decision threshold, swept over all interval lower bounds plus the
/// safety threshold, that attains maximum sensitivity, then maximum
/// specificity, then the smallest value. Requires both classes present.
double retrospective_threshold(std::span<const PredictionInterval> intervals,
                               std::span<const double> labels, const RiskSpec& spec);

/// Mean and sample standard deviation per metric. Coverage and width
/// aggregate only when present in every report.
AggregateReport aggregate(std::span<const MetricsReport> reports);

}  // namespace qatriage
