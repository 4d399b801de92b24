#include "qatriage/training_aware.hpp"

#include <numeric>

#include "qatriage/error.hpp"

namespace qatriage {

namespace {

struct LoopData {
  Matrix train_x;
  std::vector<double> train_y;
  Matrix val_x;
  std::vector<double> val_y;
  std::size_t steps_per_epoch = 0;
};

LoopData prepare(const Dataset& train_data, const Dataset& val_data, const LoopConfig& cfg) {
  if (train_data.size() == 0 || val_data.size() == 0) {
    throw Error("training loops need non-empty train and validation data");
  }
  if (cfg.warmup_epochs >= cfg.base.epochs) {
    throw Error("warmup_epochs must be smaller than epochs");
  }
  LoopData data;
  data.train_x = feature_matrix(train_data);
  data.train_y = labels(train_data);
  data.val_x = feature_matrix(val_data);
  data.val_y = labels(val_data);
  const std::size_t batch = std::min<std::size_t>(
      std::max<std::size_t>(cfg.base.minibatch_size, 1), train_data.size());
  data.steps_per_epoch = (train_data.size() + batch - 1) / batch;
  return data;
}

double mean_after_warmup(const std::vector<double>& history, std::size_t warmup_steps) {
  if (warmup_steps >= history.size()) {
    throw Error("warmup consumed every training step");
  }
  return std::accumulate(history.begin() + static_cast<std::ptrdiff_t>(warmup_steps),
                         history.end(), 0.0) /
         static_cast<double>(history.size() - warmup_steps);
}

// Runs the shared loop shape: per step, derive a one-sided width from the
// current model and the validation set, record it, and penalize lower-bound
// overshoot at that width.
template <typename WidthFn>
TrainedIntervalModel run_loop(const Dataset& train_data, const Dataset& val_data,
                              const LoopConfig& cfg, IntervalMethod method,
                              WidthFn&& width_of) {
  const LoopData data = prepare(train_data, val_data, cfg);
  std::vector<double> history;
  history.reserve(cfg.base.epochs * data.steps_per_epoch);

  const auto schedule = [&](const MlpParams& params, std::size_t) {
    const std::vector<double> val_pred = predict(params, data.val_x);
    const double width = width_of(val_pred, data.val_y);
    history.push_back(width);
    return Objective::lower_penalty(width);
  };

  TrainedIntervalModel model;
  model.method = method;
  model.params = train_with_schedule(data.train_x, data.train_y, cfg.base, schedule);
  model.width_history = std::move(history);
  const std::size_t warmup_steps = cfg.warmup_epochs * data.steps_per_epoch;
  if (cfg.recalibrate) {
    model.one_sided_width = width_of(predict(model.params, data.val_x), data.val_y);
  } else {
    model.one_sided_width = mean_after_warmup(model.width_history, warmup_steps);
  }
  return model;
}

}  // namespace

TrainedIntervalModel conformal_train(const Dataset& train_data, const Dataset& val_data,
                                     const LoopConfig& cfg) {
  return run_loop(train_data, val_data, cfg, IntervalMethod::ct,
                  [&cfg](const std::vector<double>& val_pred, const std::vector<double>& val_y) {
                    return conformal_quantile(nonconformity(val_pred, val_y), cfg.spec.alpha);
                  });
}

TrainedIntervalModel crc_aware_train(const Dataset& train_data, const Dataset& val_data,
                                     const LoopConfig& cfg) {
  if (cfg.lambda_grid.empty()) {
    throw Error("crc_aware_train needs a lambda grid");
  }
  return run_loop(train_data, val_data, cfg, IntervalMethod::ta_crc,
                  [&cfg](const std::vector<double>& val_pred, const std::vector<double>& val_y) {
                    const CrcCalibration calibration =
                        crc_select_lambda(val_pred, val_y, cfg.spec, cfg.lambda_grid);
                    return calibration.lambda * calibration.err;
                  });
}

std::vector<PredictionInterval> predict_with_fixed_interval(const TrainedIntervalModel& model,
                                                            const Matrix& X) {
  const std::vector<double> predictions = predict(model.params, X);
  std::vector<PredictionInterval> intervals;
  intervals.reserve(predictions.size());
  for (double prediction : predictions) {
    intervals.push_back(split_cp_interval(prediction, model.one_sided_width));
  }
  return intervals;
}

}  // namespace qatriage
