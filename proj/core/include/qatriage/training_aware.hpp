#pragma once

#include <vector>

#include "qatriage/conformal.hpp"
#include "qatriage/data.hpp"
#include "qatriage/mlp.hpp"

namespace qatriage {

enum class IntervalMethod { ct, ta_crc };

/// A trained network plus the fixed one-sided test-time width I. I is the
/// mean of width_history past the warmup cutoff, so it is recomputable from
/// the history exactly.
struct TrainedIntervalModel {
  MlpParams params;
  double one_sided_width = 0.0;
  IntervalMethod method = IntervalMethod::ct;
  std::vector<double> width_history;  // one entry per optimizer step
};

struct LoopConfig {
  TrainConfig base;
  RiskSpec spec;
  std::vector<double> lambda_grid;  // used by crc_aware_train only
  std::size_t warmup_epochs = 0;    // steps from these epochs are excluded from I
  /// When set, I is replaced after training by a fresh calibration on the
  /// validation set (quantile for ct, lambda * err for ta_crc). Off by
  /// default: the averaged-width variant is the primary behavior.
  bool recalibrate = false;
};

/// Conformal training: every minibatch recomputes the validation
/// nonconformity quantile I_step at spec.alpha, records it, and steps on
/// MSE + mean(max(0, (pred - I_step) - y)). I_step is treated as a constant
/// within the step (no gradient flows through it).
TrainedIntervalModel conformal_train(const Dataset& train_data, const Dataset& val_data,
                                     const LoopConfig& cfg);

/// Training-aware risk control: every minibatch runs the CRC lambda search
/// on current validation predictions and penalizes lower-bound overshoot at
/// width w_step = lambda_step * err_step.
TrainedIntervalModel crc_aware_train(const Dataset& train_data, const Dataset& val_data,
                                     const LoopConfig& cfg);

/// Symmetric intervals of half-width model.one_sided_width around each
/// prediction; every interval has width exactly 2 * I.
std::vector<PredictionInterval> predict_with_fixed_interval(const TrainedIntervalModel& model,
                                                            const Matrix& X);

}  // namespace qatriage
