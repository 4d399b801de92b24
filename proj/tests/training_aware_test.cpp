#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "qatriage/error.hpp"
#include "qatriage/training_aware.hpp"

using namespace qatriage;

namespace {

Dataset linear_dataset(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Dataset ds;
  ds.feature_names = {"x1", "x2"};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = dist(rng);
    const double b = dist(rng);
    ds.records.push_back({{a, b}, 2.0 * a - b});
  }
  return ds;
}

LoopConfig small_loop_config() {
  LoopConfig cfg;
  cfg.base.hidden = 8;
  cfg.base.epochs = 20;
  cfg.base.learning_rate = 0.05;
  cfg.base.minibatch_size = 16;
  cfg.base.seed = 9;
  cfg.lambda_grid = default_lambda_grid();
  cfg.warmup_epochs = 2;
  return cfg;
}

}  // namespace

TEST_SUITE("training_aware") {

TEST_CASE("both loops are deterministic per seed") {
  std::mt19937_64 rng(31);
  const Dataset train_data = linear_dataset(rng, 48);
  const Dataset val_data = linear_dataset(rng, 24);
  const LoopConfig cfg = small_loop_config();
  for (const bool use_crc : {false, true}) {
    const TrainedIntervalModel first = use_crc ? crc_aware_train(train_data, val_data, cfg)
                                               : conformal_train(train_data, val_data, cfg);
    const TrainedIntervalModel second = use_crc ? crc_aware_train(train_data, val_data, cfg)
                                                : conformal_train(train_data, val_data, cfg);
    CHECK(first.params.w1.values() == second.params.w1.values());
    CHECK(first.params.w2 == second.params.w2);
    CHECK(first.width_history == second.width_history);
    CHECK(first.one_sided_width == second.one_sided_width);
    CHECK(first.method == (use_crc ? IntervalMethod::ta_crc : IntervalMethod::ct));
  }
}

TEST_CASE("width history covers every optimizer step and I is its post-warmup mean") {
  std::mt19937_64 rng(33);
  const Dataset train_data = linear_dataset(rng, 50);
  const Dataset val_data = linear_dataset(rng, 20);
  LoopConfig cfg = small_loop_config();
  cfg.base.minibatch_size = 16;  // 50 rows -> 4 steps per epoch
  const TrainedIntervalModel model = conformal_train(train_data, val_data, cfg);
  const std::size_t steps_per_epoch = 4;
  CHECK(model.width_history.size() == cfg.base.epochs * steps_per_epoch);
  const std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  const double recomputed =
      std::accumulate(model.width_history.begin() + warmup_steps, model.width_history.end(),
                      0.0) /
      double(model.width_history.size() - warmup_steps);
  CHECK(model.one_sided_width == recomputed);
  for (double w : model.width_history) CHECK(w >= 0.0);
}

TEST_CASE("zero warmup averages the whole history") {
  std::mt19937_64 rng(35);
  const Dataset train_data = linear_dataset(rng, 32);
  const Dataset val_data = linear_dataset(rng, 16);
  LoopConfig cfg = small_loop_config();
  cfg.warmup_epochs = 0;
  const TrainedIntervalModel model = conformal_train(train_data, val_data, cfg);
  const double all_mean =
      std::accumulate(model.width_history.begin(), model.width_history.end(), 0.0) /
      double(model.width_history.size());
  CHECK(model.one_sided_width == all_mean);
}

TEST_CASE("loop preconditions") {
  std::mt19937_64 rng(37);
  const Dataset train_data = linear_dataset(rng, 32);
  const Dataset val_data = linear_dataset(rng, 16);
  LoopConfig cfg = small_loop_config();
  cfg.warmup_epochs = cfg.base.epochs;
  CHECK_THROWS_AS(conformal_train(train_data, val_data, cfg), Error);
  cfg.warmup_epochs = 0;
  CHECK_THROWS_AS(conformal_train(Dataset{}, val_data, cfg), Error);
  cfg.lambda_grid.clear();
  CHECK_THROWS_AS(crc_aware_train(train_data, val_data, cfg), Error);
}

TEST_CASE("conformal training on noiseless linear data drives the width near zero") {
  std::mt19937_64 rng(39);
  const Dataset train_data = linear_dataset(rng, 120);
  const Dataset val_data = linear_dataset(rng, 60);
  const Dataset held = linear_dataset(rng, 40);
  LoopConfig cfg = small_loop_config();
  cfg.base.hidden = 16;
  cfg.base.epochs = 800;
  cfg.warmup_epochs = 80;
  const TrainedIntervalModel model = conformal_train(train_data, val_data, cfg);
  CHECK(model.one_sided_width < 0.5);
  CHECK(loss_value(model.params, feature_matrix(held), labels(held), Objective::mse()) < 1e-2);
  // Late widths reflect the converged fit, not the average over training.
  CHECK(model.width_history.back() < 0.2);
}

TEST_CASE("crc loop with an all-safe validation set selects the smallest feasible lambda") {
  // No validation label is below the safety threshold, so the empirical risk
  // is zero at every lambda and the selection reduces to 1/(n+1) <= alpha.
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Dataset train_data;
  Dataset val_data;
  train_data.feature_names = {"x"};
  val_data.feature_names = {"x"};
  for (int i = 0; i < 40; ++i) train_data.records.push_back({{dist(rng)}, 97.0 + dist(rng)});
  for (int i = 0; i < 20; ++i) val_data.records.push_back({{dist(rng)}, 97.0 + dist(rng)});

  LoopConfig cfg = small_loop_config();
  cfg.spec.alpha = 0.1;  // 1/21 < 0.1, so lambda = grid.front()
  cfg.warmup_epochs = 0;
  const TrainedIntervalModel model = crc_aware_train(train_data, val_data, cfg);
  for (double w : model.width_history) CHECK(w == 0.0);
  CHECK(model.one_sided_width == 0.0);

  // The same rule, checked directly against the selection routine.
  const std::vector<double> preds(val_data.size(), 96.0);
  const std::vector<double> coarse = {0.25, 0.5, 1.0};
  const CrcCalibration calib = crc_select_lambda(preds, labels(val_data), cfg.spec, coarse);
  CHECK(calib.lambda == 0.25);
}

TEST_CASE("alpha at or below 1/(n_val+1) forces the fallback width every step") {
  std::mt19937_64 rng(47);
  const Dataset train_data = linear_dataset(rng, 24);
  const Dataset val_data = linear_dataset(rng, 5);
  LoopConfig cfg = small_loop_config();
  cfg.spec.alpha = 0.1;  // 1/(5+1) = 0.167 > alpha: unsatisfiable
  cfg.base.epochs = 1;
  cfg.base.minibatch_size = 64;  // one step in total
  cfg.warmup_epochs = 0;
  const TrainedIntervalModel model = crc_aware_train(train_data, val_data, cfg);
  REQUIRE(model.width_history.size() == 1);

  // The single step sees the freshly initialized network, so the recorded
  // width is lambda_max times the worst validation residual at init.
  const MlpParams init = init_params(2, cfg.base);
  const std::vector<double> init_pred = predict(init, feature_matrix(val_data));
  const std::vector<double> val_y = labels(val_data);
  double err = 0.0;
  for (std::size_t i = 0; i < val_y.size(); ++i) {
    err = std::max(err, std::fabs(init_pred[i] - val_y[i]));
  }
  CHECK(model.width_history[0] == cfg.lambda_grid.back() * err);
  CHECK(model.one_sided_width == model.width_history[0]);
}

TEST_CASE("crc loop with a never-binding hinge reproduces plain mse training") {
  // A huge fallback width keeps the penalty inactive on every minibatch, so
  // the loop must walk the exact same parameter trajectory as train().
  std::mt19937_64 rng(53);
  const Dataset train_data = linear_dataset(rng, 40);
  const Dataset val_data = linear_dataset(rng, 4);
  LoopConfig cfg = small_loop_config();
  cfg.spec.alpha = 0.05;  // 1/5 > alpha: fallback branch
  cfg.lambda_grid = {0.0, 1000.0};
  const TrainedIntervalModel model = crc_aware_train(train_data, val_data, cfg);

  TrainConfig plain = cfg.base;
  plain.objective = Objective::mse();
  const MlpParams reference = train(feature_matrix(train_data), labels(train_data), plain);
  CHECK(model.params.w1.values() == reference.w1.values());
  CHECK(model.params.b1 == reference.b1);
  CHECK(model.params.w2 == reference.w2);
  CHECK(model.params.b2 == reference.b2);
}

TEST_CASE("fixed-width intervals are symmetric with width 2I") {
  std::mt19937_64 rng(59);
  const Dataset train_data = linear_dataset(rng, 32);
  const Dataset val_data = linear_dataset(rng, 16);
  const Dataset probe = linear_dataset(rng, 10);
  const LoopConfig cfg = small_loop_config();
  const TrainedIntervalModel model = conformal_train(train_data, val_data, cfg);
  const Matrix X = feature_matrix(probe);
  const std::vector<PredictionInterval> intervals = predict_with_fixed_interval(model, X);
  const std::vector<double> predictions = predict(model.params, X);
  REQUIRE(intervals.size() == predictions.size());
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    CHECK(intervals[i].low == predictions[i] - model.one_sided_width);
    CHECK(intervals[i].high == predictions[i] + model.one_sided_width);
    CHECK(std::fabs(intervals[i].width() - 2.0 * model.one_sided_width) < 1e-12);
  }

  TrainedIntervalModel point = model;
  point.one_sided_width = 0.0;
  for (const PredictionInterval& interval : predict_with_fixed_interval(point, X)) {
    CHECK(interval.low == interval.high);
  }
  const Matrix wrong(3, 5);
  CHECK_THROWS_AS(predict_with_fixed_interval(model, wrong), DimensionError);
}

TEST_CASE("recalibration replaces the averaged width with a fresh one") {
  std::mt19937_64 rng(61);
  const Dataset train_data = linear_dataset(rng, 40);
  const Dataset val_data = linear_dataset(rng, 20);
  LoopConfig cfg = small_loop_config();
  cfg.recalibrate = true;
  const TrainedIntervalModel ct = conformal_train(train_data, val_data, cfg);
  const double expected_ct = conformal_quantile(
      nonconformity(predict(ct.params, feature_matrix(val_data)), labels(val_data)),
      cfg.spec.alpha);
  CHECK(ct.one_sided_width == expected_ct);

  const TrainedIntervalModel ta = crc_aware_train(train_data, val_data, cfg);
  const CrcCalibration calib =
      crc_select_lambda(predict(ta.params, feature_matrix(val_data)), labels(val_data),
                        cfg.spec, cfg.lambda_grid);
  CHECK(ta.one_sided_width == calib.lambda * calib.err);
}

TEST_CASE("ta-crc width stays at or below split-cp width across seeds") {
  // Paired comparison on synthetic pools: the training-aware width I is
  // compared with the split-CP half-width computed from a plain MSE model
  // trained under the same seed.
  double ta_sum = 0.0;
  double cp_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthConfig synth;
    synth.n = 400;
    synth.unsafe_rate = 0.1;
    synth.noise_sd = 2.0;
    synth.seed = 100 + seed;
    const Dataset pool = synth_generate(synth);
    SplitSpec split_spec;
    split_spec.seed = seed;
    const Split parts = split(pool, split_spec);

    LoopConfig cfg;
    cfg.base.hidden = 16;
    cfg.base.epochs = 120;
    cfg.base.learning_rate = 0.05;
    cfg.base.minibatch_size = 32;
    cfg.base.seed = seed;
    cfg.lambda_grid = default_lambda_grid();
    cfg.warmup_epochs = 12;
    const TrainedIntervalModel ta = crc_aware_train(parts.train, parts.val, cfg);
    ta_sum += ta.one_sided_width;

    TrainConfig plain = cfg.base;
    const MlpParams base =
        train(feature_matrix(parts.train), labels(parts.train), plain);
    const double cp_width = conformal_quantile(
        nonconformity(predict(base, feature_matrix(parts.val)), labels(parts.val)),
        cfg.spec.alpha);
    cp_sum += cp_width;
  }
  CHECK(ta_sum / 10.0 <= cp_sum / 10.0);
}

}  // TEST_SUITE
