#include "qatriage/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "qatriage/error.hpp"

namespace qatriage {

namespace {

MetricsReport metrics_from_decisions(const std::vector<bool>& predicted_safe,
                                     std::span<const double> labels, double threshold,
                                     const RiskSpec& spec) {
  const std::size_t n = labels.size();
  std::size_t n_unsafe = 0;
  std::size_t n_safe = 0;
  std::size_t caught_unsafe = 0;   // actual unsafe, sent to measurement
  std::size_t skipped_safe = 0;    // actual safe, skipped
  std::size_t total_skipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool actual_unsafe = labels[i] < spec.safety_threshold;
    if (predicted_safe[i]) ++total_skipped;
    if (actual_unsafe) {
      ++n_unsafe;
      if (!predicted_safe[i]) ++caught_unsafe;
    } else {
      ++n_safe;
      if (predicted_safe[i]) ++skipped_safe;
    }
  }
  MetricsReport report;
  report.n_test = n;
  report.threshold_used = threshold;
  report.unsafe_class_empty = n_unsafe == 0;
  report.safe_class_empty = n_safe == 0;
  report.sensitivity = n_unsafe == 0
                           ? 1.0
                           : static_cast<double>(caught_unsafe) / static_cast<double>(n_unsafe);
  report.specificity =
      n_safe == 0 ? 1.0 : static_cast<double>(skipped_safe) / static_cast<double>(n_safe);
  report.reduction_in_measurement =
      static_cast<double>(total_skipped) / static_cast<double>(n);
  return report;
}

AggregateStat aggregate_values(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  AggregateStat stat;
  for (double v : values) stat.mean += v;
  stat.mean /= n;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) {
      const double d = v - stat.mean;
      ss += d * d;
    }
    stat.std = std::sqrt(ss / (n - 1.0));
  }
  return stat;
}

}  // namespace

TriageDecision triage(const PredictionInterval& interval, double threshold) {
  return interval.low > threshold ? TriageDecision::safe_skip_measurement
                                  : TriageDecision::needs_measurement;
}

MetricsReport compute_metrics(std::span<const PredictionInterval> intervals,
                              std::span<const double> labels, double threshold,
                              const RiskSpec& spec) {
  if (intervals.size() != labels.size()) {
    throw DimensionError("compute_metrics", intervals.size(), labels.size());
  }
  if (intervals.empty()) {
    throw Error("compute_metrics requires at least one test point");
  }
  std::vector<bool> predicted_safe(intervals.size());
  double covered = 0.0;
  double width_sum = 0.0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    predicted_safe[i] =
        triage(intervals[i], threshold) == TriageDecision::safe_skip_measurement;
    if (intervals[i].contains(labels[i])) covered += 1.0;
    width_sum += intervals[i].width();
  }
  MetricsReport report = metrics_from_decisions(predicted_safe, labels, threshold, spec);
  report.coverage = covered / static_cast<double>(intervals.size());
  report.mean_interval_width = width_sum / static_cast<double>(intervals.size());
  return report;
}

MetricsReport compute_point_metrics(std::span<const double> predictions,
                                    std::span<const double> labels, double threshold,
                                    const RiskSpec& spec) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("compute_point_metrics", predictions.size(), labels.size());
  }
  if (predictions.empty()) {
    throw Error("compute_point_metrics requires at least one test point");
  }
  std::vector<bool> predicted_safe(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    predicted_safe[i] = predictions[i] > threshold;
  }
  return metrics_from_decisions(predicted_safe, labels, threshold, spec);
}

double retrospective_threshold(std::span<const PredictionInterval> intervals,
                               std::span<const double> labels, const RiskSpec& spec) {
  if (intervals.size() != labels.size()) {
    throw DimensionError("retrospective_threshold", intervals.size(), labels.size());
  }
  bool has_unsafe = false;
  bool has_safe = false;
  for (double y : labels) {
    (y < spec.safety_threshold ? has_unsafe : has_safe) = true;
  }
  if (!has_unsafe || !has_safe) {
    throw Error("retrospective_threshold needs both classes in the labels");
  }

  std::vector<double> candidates;
  candidates.reserve(intervals.size() + 1);
  for (const PredictionInterval& interval : intervals) {
    candidates.push_back(interval.low);
  }
  candidates.push_back(spec.safety_threshold);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  double best_threshold = candidates.front();
  double best_sensitivity = -1.0;
  double best_specificity = -1.0;
  for (double candidate : candidates) {
    const MetricsReport report = compute_metrics(intervals, labels, candidate, spec);
    if (report.sensitivity > best_sensitivity ||
        (report.sensitivity == best_sensitivity &&
         (report.specificity > best_specificity ||
          (report.specificity == best_specificity && candidate < best_threshold)))) {
      best_threshold = candidate;
      best_sensitivity = report.sensitivity;
      best_specificity = report.specificity;
    }
  }
  return best_threshold;
}

AggregateReport aggregate(std::span<const MetricsReport> reports) {
  if (reports.empty()) {
    throw Error("aggregate requires at least one report");
  }
  AggregateReport out;
  out.runs = reports.size();
  std::vector<double> values(reports.size());

  const auto gather = [&](auto field) {
    for (std::size_t i = 0; i < reports.size(); ++i) values[i] = field(reports[i]);
    return aggregate_values(values);
  };
  out.sensitivity = gather([](const MetricsReport& r) { return r.sensitivity; });
  out.specificity = gather([](const MetricsReport& r) { return r.specificity; });
  out.reduction_in_measurement =
      gather([](const MetricsReport& r) { return r.reduction_in_measurement; });

  const bool all_coverage =
      std::all_of(reports.begin(), reports.end(),
                  [](const MetricsReport& r) { return r.coverage.has_value(); });
  if (all_coverage) {
    out.coverage = gather([](const MetricsReport& r) { return *r.coverage; });
  }
  const bool all_width =
      std::all_of(reports.begin(), reports.end(),
                  [](const MetricsReport& r) { return r.mean_interval_width.has_value(); });
  if (all_width) {
    out.mean_interval_width =
        gather([](const MetricsReport& r) { return *r.mean_interval_width; });
  }
  return out;
}

}  // namespace qatriage
