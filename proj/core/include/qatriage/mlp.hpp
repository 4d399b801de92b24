#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qatriage/matrix.hpp"

namespace qatriage {

enum class Activation { sigmoid, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Weights of a dense two-layer regressor: one hidden layer followed by a
/// scalar linear head.
struct MlpParams {
  Matrix w1;               // hidden x input
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // 1 x hidden, stored flat
  double b2 = 0.0;
  Activation activation = Activation::sigmoid;

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
};

/// Gradient of a training objective with respect to every entry of MlpParams.
struct MlpGradient {
  Matrix w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
};

/// Training objective. `lower_penalty` is MSE plus a one-sided hinge
/// mean(max(0, (prediction - lower_width) - label)): it fires only when the
/// lower bound prediction - lower_width overshoots the label.
struct Objective {
  enum class Kind { mse, pinball, lower_penalty };

  Kind kind = Kind::mse;
  double tau = 0.5;          // pinball only, must lie in (0, 1)
  double lower_width = 0.0;  // lower_penalty only, must be >= 0

  static Objective mse() { return Objective{Kind::mse, 0.5, 0.0}; }
  static Objective pinball(double tau);
  static Objective lower_penalty(double width);
};

struct TrainConfig {
  std::size_t hidden = 100;
  std::size_t epochs = 1500;
  double learning_rate = 0.01;
  std::size_t minibatch_size = 32;
  std::uint64_t seed = 0;
  Objective objective = Objective::mse();
  double init_scale = 0.0;  // <= 0 selects 1/sqrt(fan_in) per layer
  Activation activation = Activation::sigmoid;
};

/// Single-row forward pass. Throws DimensionError if x does not match the
/// parameter input dimension.
double forward(const MlpParams& params, std::span<const double> x);

/// Forward pass over every row of X.
std::vector<double> predict(const MlpParams& params, const Matrix& X);

/// Value of `objective` on the batch (X, y). Batch must be non-empty.
double loss_value(const MlpParams& params, const Matrix& X, const std::vector<double>& y,
                  const Objective& objective);

/// Exact gradient of loss_value with respect to params. Hinge and pinball
/// subgradients at their kinks are taken as 0.
MlpGradient grad(const MlpParams& params, const Matrix& X, const std::vector<double>& y,
                 const Objective& objective);

/// Seeded parameter initialization: weights uniform in
/// [-init_scale, +init_scale], biases zero.
MlpParams init_params(std::size_t input_dim, const TrainConfig& config);

/// In-place gradient-descent update params -= learning_rate * gradient.
void apply_gradient(MlpParams& params, const MlpGradient& gradient, double learning_rate);

/// Objective supplied per optimizer step; `params` is the state before the
/// step and `step` counts optimizer steps from 0.
using ObjectiveSchedule = std::function<Objective(const MlpParams& params, std::size_t step)>;

/// Minibatch gradient descent for config.epochs epochs. Initialization and
/// per-epoch shuffling both derive from config.seed, so a fixed seed gives
/// bitwise-identical parameters. Throws DivergedError on a non-finite loss.
MlpParams train(const Matrix& X, const std::vector<double>& y, const TrainConfig& config);

/// Same loop as train() but the objective is chosen per step by `schedule`.
/// The RNG stream is identical to train()'s, so the same seed visits the
/// same minibatches.
MlpParams train_with_schedule(const Matrix& X, const std::vector<double>& y,
                              const TrainConfig& config, const ObjectiveSchedule& schedule);

/// Trains the CQR head pair: a pinball(alpha/2) model and a
/// pinball(1 - alpha/2) model, both from config.seed.
std::pair<MlpParams, MlpParams> train_quantile_pair(const Matrix& X,
                                                    const std::vector<double>& y,
                                                    const TrainConfig& config, double alpha);

}  // namespace qatriage
