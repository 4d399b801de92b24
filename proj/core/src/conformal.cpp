#include "qatriage/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qatriage/error.hpp"

namespace qatriage {

namespace {

// Guard against spurious rank bumps when (n+1)(1-alpha) is representable
// only approximately, e.g. 10 * 0.9 = 9.000000000000002.
constexpr double kRankEpsilon = 1e-9;

void check_alpha(double alpha) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) {
    throw Error("alpha must lie in (0, 1)");
  }
}

void check_grid(std::span<const double> grid) {
  if (grid.empty()) {
    throw Error("lambda grid must be non-empty");
  }
  if (grid.front() < 0.0) {
    throw Error("lambda grid must be non-negative");
  }
  if (!std::is_sorted(grid.begin(), grid.end())) {
    throw Error("lambda grid must be sorted ascending");
  }
}

}  // namespace

NonconformityScores nonconformity(std::span<const double> predictions,
                                  std::span<const double> labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("nonconformity", predictions.size(), labels.size());
  }
  NonconformityScores scores;
  scores.values.resize(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    scores.values[i] = std::abs(predictions[i] - labels[i]);
  }
  return scores;
}

double conformal_quantile(const NonconformityScores& scores, double alpha) {
  check_alpha(alpha);
  const std::size_t n = scores.size();
  if (n == 0) {
    throw Error("conformal_quantile requires at least one score");
  }
  const double raw = (static_cast<double>(n) + 1.0) * (1.0 - alpha);
  auto k = static_cast<std::size_t>(std::ceil(raw - kRankEpsilon));
  k = std::min(k, n);
  std::vector<double> sorted(scores.values);
  std::stable_sort(sorted.begin(), sorted.end());
  return sorted[k - 1];
}

PredictionInterval split_cp_interval(double prediction, double half_width) {
  if (half_width < 0.0) {
    throw Error("split_cp_interval half_width must be >= 0");
  }
  return {prediction - half_width, prediction + half_width, false};
}

PredictionInterval cqr_interval(double pred_low, double pred_high, double i_low, double i_high) {
  const double low = pred_low - i_low;
  const double high = pred_high + i_high;
  if (low > high) {
    const double mid = 0.5 * (low + high);
    return {mid, mid, true};
  }
  return {low, high, false};
}

int risk_loss(const PredictionInterval& interval, double label, const RiskSpec& spec) {
  return (interval.low > spec.safety_threshold && label < spec.safety_threshold) ? 1 : 0;
}

double empirical_risk(std::span<const PredictionInterval> intervals,
                      std::span<const double> labels, const RiskSpec& spec) {
  if (intervals.size() != labels.size()) {
    throw DimensionError("empirical_risk", intervals.size(), labels.size());
  }
  if (intervals.empty()) {
    throw Error("empirical_risk requires at least one pair");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    total += risk_loss(intervals[i], labels[i], spec);
  }
  return total / static_cast<double>(intervals.size());
}

std::vector<double> crc_risk_curve(std::span<const double> predictions,
                                   std::span<const double> labels, const RiskSpec& spec,
                                   std::span<const double> grid) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("crc_risk_curve", predictions.size(), labels.size());
  }
  if (predictions.empty()) {
    throw Error("crc_risk_curve requires at least one pair");
  }
  check_grid(grid);
  const NonconformityScores scores = nonconformity(predictions, labels);
  const double err = *std::max_element(scores.values.begin(), scores.values.end());
  std::vector<double> curve(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double half = grid[g] * err;
    double total = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      total += risk_loss({predictions[i] - half, predictions[i] + half, false}, labels[i], spec);
    }
    curve[g] = total / static_cast<double>(predictions.size());
  }
  return curve;
}

CrcCalibration crc_select_lambda(std::span<const double> val_predictions,
                                 std::span<const double> val_labels, const RiskSpec& spec,
                                 std::span<const double> grid) {
  if (val_predictions.size() != val_labels.size()) {
    throw DimensionError("crc_select_lambda", val_predictions.size(), val_labels.size());
  }
  if (val_predictions.empty()) {
    throw Error("crc_select_lambda requires at least one validation pair");
  }
  check_alpha(spec.alpha);
  check_grid(grid);

  const std::size_t n = val_predictions.size();
  const NonconformityScores scores = nonconformity(val_predictions, val_labels);
  const double err = *std::max_element(scores.values.begin(), scores.values.end());

  // A point contributes loss 1 at lambda exactly when
  //   prediction - lambda*err > threshold  and  label < threshold,
  // i.e. for lambda strictly below (prediction - threshold) / err. Collect
  // those critical values and count by binary search rather than rescanning
  // the data per grid point.
  std::vector<double> critical;
  std::size_t undiluted = 0;  // points whose loss never decays (err == 0 case)
  for (std::size_t i = 0; i < n; ++i) {
    if (val_labels[i] < spec.safety_threshold &&
        val_predictions[i] > spec.safety_threshold) {
      if (err == 0.0) {
        ++undiluted;
      } else {
        critical.push_back((val_predictions[i] - spec.safety_threshold) / err);
      }
    }
  }
  std::sort(critical.begin(), critical.end());

  const double n_d = static_cast<double>(n);
  const double bound = spec.alpha + 1e-12;
  CrcCalibration calibration;
  calibration.err = err;
  calibration.grid.assign(grid.begin(), grid.end());

  for (double lambda : grid) {
    // Count critical values strictly greater than lambda.
    const auto it = std::upper_bound(critical.begin(), critical.end(), lambda);
    const double losses = static_cast<double>(undiluted) + static_cast<double>(critical.end() - it);
    const double risk = losses / n_d;
    const double adjusted = (n_d / (n_d + 1.0)) * risk + 1.0 / (n_d + 1.0);
    if (adjusted <= bound) {
      calibration.lambda = lambda;
      return calibration;
    }
  }
  calibration.lambda = grid.back();
  return calibration;
}

PredictionInterval crc_interval(double prediction, const CrcCalibration& calibration) {
  const double half = calibration.lambda * calibration.err;
  return {prediction - half, prediction + half, false};
}

PredictionInterval ensemble_aggregate(std::span<const PredictionInterval> members) {
  if (members.empty()) {
    throw Error("ensemble_aggregate requires at least one member");
  }
  PredictionInterval hull = members.front();
  for (std::size_t i = 1; i < members.size(); ++i) {
    hull.low = std::min(hull.low, members[i].low);
    hull.high = std::max(hull.high, members[i].high);
    hull.crossed = hull.crossed || members[i].crossed;
  }
  return hull;
}

std::vector<double> make_lambda_grid(double min, double max, std::size_t points) {
  if (points < 2) {
    throw Error("lambda grid needs at least two points");
  }
  if (!(min < max)) {
    throw Error("lambda grid needs min < max");
  }
  std::vector<double> grid(points);
  const double step = (max - min) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = min + step * static_cast<double>(i);
  }
  grid.back() = max;
  return grid;
}

std::vector<double> default_lambda_grid() { return make_lambda_grid(0.0, 2.0, 201); }

}  // namespace qatriage
