#pragma once

#include <span>
#include <vector>

namespace qatriage {

/// Calibration residual magnitudes |prediction - label|, all >= 0.
struct NonconformityScores {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

/// A [low, high] band on the pass-rate scale. `crossed` is set only by
/// cqr_interval when quantile crossing forced a collapse to the midpoint.
struct PredictionInterval {
  double low = 0.0;
  double high = 0.0;
  bool crossed = false;

  double width() const { return high - low; }
  bool contains(double y) const { return low <= y && y <= high; }
};

/// The clinical decision contract: plans with a label below safety_threshold
/// are unsafe, alpha is the miscoverage / risk budget, and loss_bound caps
/// the risk loss (1 for the binary loss used here).
struct RiskSpec {
  double safety_threshold = 95.0;
  double alpha = 0.1;
  double loss_bound = 1.0;
};

/// Result of the risk-control lambda search on a validation set.
struct CrcCalibration {
  double lambda = 0.0;       // selected grid value
  double err = 0.0;          // max nonconformity on the validation data
  std::vector<double> grid;  // the grid searched, ascending
};

/// Elementwise |prediction - label|.
NonconformityScores nonconformity(std::span<const double> predictions,
                                  std::span<const double> labels);

/// Finite-sample-corrected empirical quantile: the k-th smallest score with
/// k = ceil((n+1)(1-alpha)), clamped to k <= n. Ties resolve by rank after a
/// stable sort. Values within 1e-9 of an integer rank are treated as that
/// integer.
double conformal_quantile(const NonconformityScores& scores, double alpha);

/// [prediction - half_width, prediction + half_width]. half_width must be >= 0.
PredictionInterval split_cp_interval(double prediction, double half_width);

/// [pred_low - i_low, pred_high + i_high]. If the two quantile heads cross
/// (left endpoint above right endpoint) the interval collapses to the
/// midpoint and is flagged `crossed`.
PredictionInterval cqr_interval(double pred_low, double pred_high, double i_low, double i_high);

/// The binary clinical loss: 1 iff the whole interval sits above the safety
/// threshold (strictly) while the true label is below it.
int risk_loss(const PredictionInterval& interval, double label, const RiskSpec& spec);

/// Mean risk_loss over the pairs; lies in [0, 1].
double empirical_risk(std::span<const PredictionInterval> intervals,
                      std::span<const double> labels, const RiskSpec& spec);

/// Empirical risk r(lambda) for every grid value, using intervals
/// [prediction - lambda*err, prediction + lambda*err] with err the max
/// validation nonconformity. Non-increasing along an ascending grid.
std::vector<double> crc_risk_curve(std::span<const double> predictions,
                                   std::span<const double> labels, const RiskSpec& spec,
                                   std::span<const double> grid);

/// Selects the smallest grid lambda with
///   (n/(n+1)) * r(lambda) + 1/(n+1) <= alpha,
/// falling back to the largest grid value when no lambda qualifies. The grid
/// must be non-empty, non-negative and sorted ascending.
CrcCalibration crc_select_lambda(std::span<const double> val_predictions,
                                 std::span<const double> val_labels, const RiskSpec& spec,
                                 std::span<const double> grid);

/// Symmetric interval of half-width calibration.lambda * calibration.err.
PredictionInterval crc_interval(double prediction, const CrcCalibration& calibration);

/// Conservative hull of the member intervals: min of lows, max of highs.
PredictionInterval ensemble_aggregate(std::span<const PredictionInterval> members);

/// Default search grid: 201 evenly spaced values on [0, 2].
std::vector<double> default_lambda_grid();

/// Evenly spaced grid of `points` values on [min, max].
std::vector<double> make_lambda_grid(double min, double max, std::size_t points);

}  // namespace qatriage
