#include "qatriage/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "qatriage/error.hpp"

namespace qatriage {

std::string to_string(Activation a) {
  return a == Activation::sigmoid ? "sigmoid" : "relu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "relu") return Activation::relu;
  throw Error("unknown activation '" + name + "' (expected sigmoid or relu)");
}

Objective Objective::pinball(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error("pinball tau must lie in (0, 1)");
  return Objective{Kind::pinball, tau, 0.0};
}

Objective Objective::lower_penalty(double width) {
  if (!(width >= 0.0)) throw Error("lower_penalty width must be >= 0");
  return Objective{Kind::lower_penalty, 0.5, width};
}

namespace {

double activate(double z, Activation a) {
  if (a == Activation::sigmoid) return 1.0 / (1.0 + std::exp(-z));
  return z > 0.0 ? z : 0.0;
}

// Derivative of the activation expressed through its output value. For relu
// the subgradient at 0 is 0.
double activate_deriv_from_output(double h, Activation a) {
  if (a == Activation::sigmoid) return h * (1.0 - h);
  return h > 0.0 ? 1.0 : 0.0;
}

void check_input_dim(const MlpParams& params, std::size_t actual, const char* context) {
  if (actual != params.input_dim()) throw DimensionError(context, params.input_dim(), actual);
}

void check_batch(const Matrix& X, const std::vector<double>& y, const char* context) {
  if (X.rows() == 0) throw Error(std::string(context) + ": empty batch");
  if (X.rows() != y.size()) throw DimensionError(context, X.rows(), y.size());
}

// Hidden activations and predictions for the rows of X listed in `rows`.
struct BatchForward {
  std::vector<double> hidden;  // m x hidden, row-major
  std::vector<double> pred;    // m
};

BatchForward batch_forward(const MlpParams& params, const Matrix& X,
                           std::span<const std::size_t> rows) {
  const std::size_t hidden_dim = params.hidden_dim();
  BatchForward out;
  out.hidden.resize(rows.size() * hidden_dim);
  out.pred.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::span<const double> x = X.row(rows[i]);
    double* h = out.hidden.data() + i * hidden_dim;
    double yhat = params.b2;
    for (std::size_t j = 0; j < hidden_dim; ++j) {
      double z = params.b1[j];
      std::span<const double> w = params.w1.row(j);
      for (std::size_t k = 0; k < x.size(); ++k) z += w[k] * x[k];
      h[j] = activate(z, params.activation);
      yhat += params.w2[j] * h[j];
    }
    out.pred[i] = yhat;
  }
  return out;
}

double loss_from_predictions(std::span<const double> pred, std::span<const double> labels,
                             const Objective& obj) {
  const double m = static_cast<double>(pred.size());
  double total = 0.0;
  switch (obj.kind) {
    case Objective::Kind::mse:
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - labels[i];
        total += d * d;
      }
      return total / m;
    case Objective::Kind::pinball:
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = labels[i] - pred[i];
        total += std::max(obj.tau * e, (obj.tau - 1.0) * e);
      }
      return total / m;
    case Objective::Kind::lower_penalty:
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - labels[i];
        total += d * d + std::max(0.0, (pred[i] - obj.lower_width) - labels[i]);
      }
      return total / m;
  }
  throw Error("unreachable objective kind");
}

// dL/dprediction for each batch element, including the 1/m of the mean.
std::vector<double> loss_grad_predictions(std::span<const double> pred,
                                          std::span<const double> labels,
                                          const Objective& obj) {
  const double inv_m = 1.0 / static_cast<double>(pred.size());
  std::vector<double> d(pred.size(), 0.0);
  switch (obj.kind) {
    case Objective::Kind::mse:
      for (std::size_t i = 0; i < pred.size(); ++i)
        d[i] = 2.0 * (pred[i] - labels[i]) * inv_m;
      break;
    case Objective::Kind::pinball:
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = labels[i] - pred[i];
        if (e > 0.0)
          d[i] = -obj.tau * inv_m;
        else if (e < 0.0)
          d[i] = (1.0 - obj.tau) * inv_m;
        // subgradient 0 at the kink e == 0
      }
      break;
    case Objective::Kind::lower_penalty:
      for (std::size_t i = 0; i < pred.size(); ++i) {
        d[i] = 2.0 * (pred[i] - labels[i]) * inv_m;
        if ((pred[i] - obj.lower_width) - labels[i] > 0.0) d[i] += inv_m;
      }
      break;
  }
  return d;
}

MlpGradient backprop(const MlpParams& params, const Matrix& X,
                     std::span<const std::size_t> rows, const BatchForward& fwd,
                     std::span<const double> dpred) {
  const std::size_t hidden_dim = params.hidden_dim();
  const std::size_t input_dim = params.input_dim();
  MlpGradient g;
  g.w1 = Matrix(hidden_dim, input_dim);
  g.b1.assign(hidden_dim, 0.0);
  g.w2.assign(hidden_dim, 0.0);
  g.b2 = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* h = fwd.hidden.data() + i * hidden_dim;
    std::span<const double> x = X.row(rows[i]);
    const double d = dpred[i];
    g.b2 += d;
    for (std::size_t j = 0; j < hidden_dim; ++j) {
      g.w2[j] += d * h[j];
      const double dz = d * params.w2[j] * activate_deriv_from_output(h[j], params.activation);
      if (dz == 0.0) continue;
      g.b1[j] += dz;
      std::span<double> gw = g.w1.row(j);
      for (std::size_t k = 0; k < input_dim; ++k) gw[k] += dz * x[k];
    }
  }
  return g;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void validate_config(const TrainConfig& config) {
  if (config.epochs < 1) throw Error("TrainConfig.epochs must be >= 1");
  if (!(config.learning_rate > 0.0)) throw Error("TrainConfig.learning_rate must be > 0");
  if (config.minibatch_size < 1) throw Error("TrainConfig.minibatch_size must be >= 1");
  if (config.hidden < 1) throw Error("TrainConfig.hidden must be >= 1");
}

MlpParams init_params_from_rng(std::size_t input_dim, const TrainConfig& config,
                               std::mt19937_64& rng) {
  validate_config(config);
  if (input_dim == 0) throw Error("init_params: input_dim must be >= 1");
  // init_scale <= 0 selects the per-layer default 1/sqrt(fan_in).
  const double w1_scale =
      config.init_scale > 0.0 ? config.init_scale : 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double w2_scale = config.init_scale > 0.0
                              ? config.init_scale
                              : 1.0 / std::sqrt(static_cast<double>(config.hidden));
  std::uniform_real_distribution<double> w1_uniform(-w1_scale, w1_scale);
  std::uniform_real_distribution<double> w2_uniform(-w2_scale, w2_scale);
  MlpParams params;
  params.activation = config.activation;
  params.w1 = Matrix(config.hidden, input_dim);
  for (double& v : params.w1.values()) v = w1_uniform(rng);
  params.b1.assign(config.hidden, 0.0);
  params.w2.resize(config.hidden);
  for (double& v : params.w2) v = w2_uniform(rng);
  params.b2 = 0.0;
  return params;
}

}  // namespace

double forward(const MlpParams& params, std::span<const double> x) {
  check_input_dim(params, x.size(), "forward");
  double yhat = params.b2;
  for (std::size_t j = 0; j < params.hidden_dim(); ++j) {
    double z = params.b1[j];
    std::span<const double> w = params.w1.row(j);
    for (std::size_t k = 0; k < x.size(); ++k) z += w[k] * x[k];
    yhat += params.w2[j] * activate(z, params.activation);
  }
  return yhat;
}

std::vector<double> predict(const MlpParams& params, const Matrix& X) {
  check_input_dim(params, X.cols(), "predict");
  std::vector<double> out(X.rows());
  const std::vector<std::size_t> rows = all_rows(X.rows());
  BatchForward fwd = batch_forward(params, X, rows);
  return fwd.pred;
}

double loss_value(const MlpParams& params, const Matrix& X, const std::vector<double>& y,
                  const Objective& objective) {
  check_batch(X, y, "loss_value");
  check_input_dim(params, X.cols(), "loss_value");
  const std::vector<std::size_t> rows = all_rows(X.rows());
  BatchForward fwd = batch_forward(params, X, rows);
  return loss_from_predictions(fwd.pred, y, objective);
}

MlpGradient grad(const MlpParams& params, const Matrix& X, const std::vector<double>& y,
                 const Objective& objective) {
  check_batch(X, y, "grad");
  check_input_dim(params, X.cols(), "grad");
  const std::vector<std::size_t> rows = all_rows(X.rows());
  BatchForward fwd = batch_forward(params, X, rows);
  std::vector<double> dpred = loss_grad_predictions(fwd.pred, y, objective);
  return backprop(params, X, rows, fwd, dpred);
}

MlpParams init_params(std::size_t input_dim, const TrainConfig& config) {
  std::mt19937_64 rng(config.seed);
  return init_params_from_rng(input_dim, config, rng);
}

void apply_gradient(MlpParams& params, const MlpGradient& gradient, double learning_rate) {
  for (std::size_t i = 0; i < params.w1.values().size(); ++i)
    params.w1.values()[i] -= learning_rate * gradient.w1.values()[i];
  for (std::size_t j = 0; j < params.b1.size(); ++j)
    params.b1[j] -= learning_rate * gradient.b1[j];
  for (std::size_t j = 0; j < params.w2.size(); ++j)
    params.w2[j] -= learning_rate * gradient.w2[j];
  params.b2 -= learning_rate * gradient.b2;
}

MlpParams train_with_schedule(const Matrix& X, const std::vector<double>& y,
                              const TrainConfig& config, const ObjectiveSchedule& schedule) {
  check_batch(X, y, "train");
  // One RNG stream drives initialization and every epoch shuffle.
  std::mt19937_64 rng(config.seed);
  MlpParams params = init_params_from_rng(X.cols(), config, rng);

  std::vector<std::size_t> order = all_rows(X.rows());
  const std::size_t batch = std::min<std::size_t>(config.minibatch_size, X.rows());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch, ++step) {
      const std::size_t count = std::min(batch, order.size() - start);
      std::span<const std::size_t> rows(order.data() + start, count);
      std::vector<double> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = y[rows[i]];

      const Objective objective = schedule(params, step);
      BatchForward fwd = batch_forward(params, X, rows);
      const double loss = loss_from_predictions(fwd.pred, labels, objective);
      if (!std::isfinite(loss)) throw DivergedError(epoch, step);
      std::vector<double> dpred = loss_grad_predictions(fwd.pred, labels, objective);
      MlpGradient g = backprop(params, X, rows, fwd, dpred);
      apply_gradient(params, g, config.learning_rate);
    }
  }
  return params;
}

MlpParams train(const Matrix& X, const std::vector<double>& y, const TrainConfig& config) {
  const Objective objective = config.objective;
  return train_with_schedule(X, y, config,
                             [&objective](const MlpParams&, std::size_t) { return objective; });
}

std::pair<MlpParams, MlpParams> train_quantile_pair(const Matrix& X,
                                                    const std::vector<double>& y,
                                                    const TrainConfig& config, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("train_quantile_pair: alpha must lie in (0, 1)");
  TrainConfig low = config;
  low.objective = Objective::pinball(alpha / 2.0);
  TrainConfig high = config;
  high.objective = Objective::pinball(1.0 - alpha / 2.0);
  return {train(X, y, low), train(X, y, high)};
}

}  // namespace qatriage
