#include <random>

#include "doctest.h"
#include "qatriage/conformal.hpp"
#include "qatriage/error.hpp"
#include "test_oracles.hpp"

using namespace qatriage;

TEST_SUITE("conformal") {

TEST_CASE("nonconformity is the elementwise absolute error") {
  const NonconformityScores scores =
      nonconformity(std::vector<double>{95.0, 90.0}, std::vector<double>{95.0, 94.0});
  CHECK(scores.values == std::vector<double>{0.0, 4.0});
  CHECK_THROWS_AS(nonconformity(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                  DimensionError);
}

TEST_CASE("conformal quantile on 1..9 at alpha 0.1 is 9") {
  NonconformityScores scores;
  scores.values = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(conformal_quantile(scores, 0.1) == 9.0);
}

TEST_CASE("conformal quantile of all zeros is zero") {
  NonconformityScores scores;
  scores.values = {0.0, 0.0, 0.0};
  CHECK(conformal_quantile(scores, 0.1) == 0.0);
  CHECK_THROWS_AS(conformal_quantile(NonconformityScores{}, 0.1), Error);
  scores.values = {1.0};
  CHECK_THROWS_AS(conformal_quantile(scores, 0.0), Error);
  CHECK_THROWS_AS(conformal_quantile(scores, 1.0), Error);
}

TEST_CASE("conformal quantile matches the counting oracle") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> value(0.0, 10.0);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int rep = 0; rep < 60; ++rep) {
      std::vector<double> values(n);
      for (double& v : values) {
        v = value(rng);
        if (rep % 3 == 0) v = std::round(v);  // force ties regularly
      }
      for (const double alpha : {0.05, 0.1, 0.2}) {
        NonconformityScores scores;
        scores.values = values;
        CHECK(conformal_quantile(scores, alpha) ==
              oracles::conformal_quantile_oracle(values, alpha));
      }
    }
  }
}

TEST_CASE("split cp interval is symmetric and rejects negative width") {
  const PredictionInterval interval = split_cp_interval(96.0, 2.0);
  CHECK(interval.low == 94.0);
  CHECK(interval.high == 98.0);
  CHECK_FALSE(interval.crossed);
  const PredictionInterval point = split_cp_interval(3.0, 0.0);
  CHECK(point.width() == 0.0);
  CHECK_THROWS_AS(split_cp_interval(1.0, -0.5), Error);
}

TEST_CASE("cqr interval subtracts and adds the per-head corrections") {
  const PredictionInterval interval = cqr_interval(94.0, 98.0, 1.0, 1.0);
  CHECK(interval.low == 93.0);
  CHECK(interval.high == 99.0);
  CHECK_FALSE(interval.crossed);
}

TEST_CASE("crossed cqr interval collapses to the midpoint") {
  const PredictionInterval interval = cqr_interval(98.0, 94.0, 0.0, 0.0);
  CHECK(interval.crossed);
  CHECK(interval.low == 96.0);
  CHECK(interval.high == 96.0);
}

TEST_CASE("risk loss fires only when the whole interval clears an unsafe label") {
  const RiskSpec spec;
  CHECK(risk_loss({96.0, 99.0, false}, 94.0, spec) == 1);
  CHECK(risk_loss({90.0, 99.0, false}, 94.0, spec) == 0);
  CHECK(risk_loss({96.0, 99.0, false}, 97.0, spec) == 0);
  // Boundary conventions: a label exactly at 95 is safe; a lower bound
  // exactly at 95 does not trigger.
  CHECK(risk_loss({96.0, 99.0, false}, 95.0, spec) == 0);
  CHECK(risk_loss({95.0, 99.0, false}, 94.0, spec) == 0);
}

TEST_CASE("empirical risk averages the loss") {
  const RiskSpec spec;
  const std::vector<PredictionInterval> intervals = {
      {96.0, 99.0, false}, {90.0, 99.0, false}, {96.0, 98.0, false}, {0.0, 100.0, false}};
  const std::vector<double> labels = {94.0, 94.0, 97.0, 50.0};
  CHECK(empirical_risk(intervals, labels, spec) == 0.25);
  CHECK_THROWS_AS(empirical_risk({}, {}, spec), Error);
}

TEST_CASE("crc lambda selection reproduces the worked instance") {
  const std::vector<double> predictions = {96.0, 93.0};
  const std::vector<double> labels = {94.0, 93.0};
  const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  RiskSpec spec;
  spec.alpha = 0.4;
  const CrcCalibration calibration = crc_select_lambda(predictions, labels, spec, grid);
  CHECK(calibration.err == 2.0);
  CHECK(calibration.lambda == 0.5);
  const std::vector<double> curve = crc_risk_curve(predictions, labels, spec, grid);
  CHECK(curve == std::vector<double>{0.5, 0.5, 0.0, 0.0, 0.0});
}

TEST_CASE("crc falls back to the largest lambda when nothing qualifies") {
  RiskSpec spec;
  spec.alpha = 0.05;  // 1/(n+1) = 0.5 > alpha: unsatisfiable
  const std::vector<double> grid = {0.0, 1.0, 2.0};
  const CrcCalibration calibration =
      crc_select_lambda(std::vector<double>{96.0}, std::vector<double>{94.0}, spec, grid);
  CHECK(calibration.lambda == 2.0);
}

TEST_CASE("crc matches the brute-force oracle on random instances") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> pred(88.0, 102.0);
  std::uniform_real_distribution<double> gap(-4.0, 4.0);
  const std::vector<double> grid = default_lambda_grid();
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int rep = 0; rep < 40; ++rep) {
      std::vector<double> predictions(n);
      std::vector<double> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        predictions[i] = pred(rng);
        labels[i] = predictions[i] + gap(rng);
      }
      for (const double alpha : {0.05, 0.1, 0.2, 0.4}) {
        RiskSpec spec;
        spec.alpha = alpha;
        const CrcCalibration calibration = crc_select_lambda(predictions, labels, spec, grid);
        CHECK(calibration.lambda ==
              oracles::crc_lambda_oracle(predictions, labels, spec, grid));
      }
    }
  }
}

TEST_CASE("risk curve is non-increasing along the grid") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> pred(90.0, 100.0);
  std::uniform_real_distribution<double> gap(-3.0, 3.0);
  const std::vector<double> grid = default_lambda_grid();
  const RiskSpec spec;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> predictions(20);
    std::vector<double> labels(20);
    for (std::size_t i = 0; i < 20; ++i) {
      predictions[i] = pred(rng);
      labels[i] = predictions[i] + gap(rng);
    }
    const std::vector<double> curve = crc_risk_curve(predictions, labels, spec, grid);
    for (std::size_t g = 1; g < curve.size(); ++g) {
      CHECK(curve[g] <= curve[g - 1]);
    }
  }
}

TEST_CASE("crc interval uses lambda times err as half-width") {
  CrcCalibration calibration;
  calibration.lambda = 0.5;
  calibration.err = 2.0;
  const PredictionInterval interval = crc_interval(96.0, calibration);
  CHECK(interval.low == 95.0);
  CHECK(interval.high == 97.0);
  calibration.lambda = 0.0;
  CHECK(crc_interval(96.0, calibration).width() == 0.0);
}

TEST_CASE("ensemble aggregate is the hull of its members") {
  const std::vector<PredictionInterval> members = {{90.0, 96.0, false}, {91.0, 97.0, false}};
  const PredictionInterval hull = ensemble_aggregate(members);
  CHECK(hull.low == 90.0);
  CHECK(hull.high == 97.0);
  const std::vector<PredictionInterval> single = {{1.0, 2.0, false}};
  const PredictionInterval same = ensemble_aggregate(single);
  CHECK(same.low == 1.0);
  CHECK(same.high == 2.0);
  CHECK_THROWS_AS(ensemble_aggregate({}), Error);
}

TEST_CASE("hull contains every member and never shrinks") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> mid(0.0, 100.0);
  std::uniform_real_distribution<double> half(0.0, 10.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<PredictionInterval> members;
    const std::size_t count = 1 + rep % 6;
    for (std::size_t m = 0; m < count; ++m) {
      const double center = mid(rng);
      const double width = half(rng);
      members.push_back({center - width, center + width, false});
    }
    const PredictionInterval hull = ensemble_aggregate(members);
    for (const PredictionInterval& member : members) {
      CHECK(hull.low <= member.low);
      CHECK(hull.high >= member.high);
    }
    members.push_back({mid(rng) - half(rng), mid(rng) + half(rng), false});
    const PredictionInterval grown = ensemble_aggregate(members);
    CHECK(grown.low <= hull.low);
    CHECK(grown.high >= hull.high);
  }
}

TEST_CASE("lambda grid construction") {
  const std::vector<double> grid = default_lambda_grid();
  CHECK(grid.size() == 201);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 2.0);
  CHECK(grid[100] == doctest::Approx(1.0));
  CHECK_THROWS_AS(make_lambda_grid(0.0, 2.0, 1), Error);
  CHECK_THROWS_AS(make_lambda_grid(2.0, 2.0, 10), Error);
  RiskSpec spec;
  const std::vector<double> unsorted = {1.0, 0.5};
  CHECK_THROWS_AS(
      crc_select_lambda(std::vector<double>{96.0}, std::vector<double>{94.0}, spec, unsorted),
      Error);
}

}  // TEST_SUITE
