#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "rentfit/csv.hpp"
#include "rentfit/dataset.hpp"

namespace rentfit {

/// Fully-connected feed-forward regressor. weights[l] has one row per unit
/// of layer l+1 and one column per unit of layer l; every hidden layer is
/// ReLU and the single output unit is linear.
struct NetworkParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::vector<Eigen::Index> layer_sizes() const {
    std::vector<Eigen::Index> sizes;
    if (weights.empty()) return sizes;
    sizes.push_back(weights.front().cols());
    for (const auto& W : weights) sizes.push_back(W.rows());
    return sizes;
  }
};

/// Seeded initialization. Draw order is fixed so results are reproducible:
/// layers from input to output, each weight matrix row by row (a row spans
/// the inputs of one unit). Hidden layers use He-uniform bounds
/// (+-sqrt(6/fan_in), suited to ReLU), the linear output layer uses
/// Glorot-uniform (+-sqrt(6/(fan_in+fan_out))); biases start at zero and
/// consume no draws.
inline NetworkParams init_network(Eigen::Index n_inputs, std::uint64_t seed,
                                  const std::vector<Eigen::Index>& hidden = {20, 5}) {
  if (n_inputs < 1) throw std::invalid_argument("init_network: need at least one input");
  for (auto h : hidden)
    if (h < 1) throw std::invalid_argument("init_network: hidden sizes must be >= 1");

  std::vector<Eigen::Index> sizes;
  sizes.push_back(n_inputs);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);

  std::mt19937_64 rng(seed);
  NetworkParams net;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const Eigen::Index fan_in = sizes[l], fan_out = sizes[l + 1];
    const bool output_layer = (l + 2 == sizes.size());
    const double limit = output_layer
                             ? std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))
                             : std::sqrt(6.0 / static_cast<double>(fan_in));
    Matrix W(fan_out, fan_in);
    for (Eigen::Index r = 0; r < fan_out; ++r)
      for (Eigen::Index c = 0; c < fan_in; ++c)
        W(r, c) = (2.0 * detail::uniform01(rng) - 1.0) * limit;
    net.weights.push_back(std::move(W));
    net.biases.push_back(Vector::Zero(fan_out));
  }
  return net;
}

namespace detail {

// Forward pass over a batch (rows are samples). pre[l] and post[l] hold the
// pre- and post-activation values of layer l+1; post of the last layer is
// the identity output.
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
};

inline ForwardTrace forward_batch(const NetworkParams& net, const Matrix& X) {
  ForwardTrace trace;
  Matrix a = X;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Matrix z = a * net.weights[l].transpose();
    z.rowwise() += net.biases[l].transpose();
    trace.pre.push_back(z);
    if (l + 1 < net.weights.size()) z = z.cwiseMax(0.0);  // ReLU on hidden layers
    trace.post.push_back(z);
    a = trace.post.back();
  }
  return trace;
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

// Mean-squared-error loss over the batch and its gradients by backprop.
// The ReLU subgradient at exactly zero is taken as zero.
inline double mse_gradients(const NetworkParams& net, const Matrix& X, const Vector& y,
                            Gradients& grads) {
  const auto m = static_cast<double>(X.rows());
  ForwardTrace trace = forward_batch(net, X);
  Vector pred = trace.post.back().col(0);
  Vector err = pred - y;
  double loss = err.squaredNorm() / m;

  grads.weights.resize(net.weights.size());
  grads.biases.resize(net.biases.size());

  Matrix delta = (2.0 / m) * err;  // d loss / d output, one column
  for (std::size_t l = net.weights.size(); l-- > 0;) {
    const Matrix& input = (l == 0) ? X : trace.post[l - 1];
    grads.weights[l] = delta.transpose() * input;
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    delta = (delta * net.weights[l]).array() *
            (trace.pre[l - 1].array() > 0.0).cast<double>();
  }
  return loss;
}

}  // namespace detail

inline Vector predict(const NetworkParams& net, const Matrix& X) {
  if (net.weights.empty()) throw std::invalid_argument("predict: uninitialized network");
  if (X.cols() != net.weights.front().cols())
    throw std::invalid_argument("predict: feature width mismatch");
  return detail::forward_batch(net, X).post.back().col(0);
}

inline double batch_mse(const NetworkParams& net, const Matrix& X, const Vector& y) {
  return (predict(net, X) - y).squaredNorm() / static_cast<double>(X.rows());
}

// --- training ----------------------------------------------------------------

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int early_stop_patience = 20;  // epochs without validation improvement
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  NetworkParams net;  // parameters from the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_mse = std::numeric_limits<double>::quiet_NaN();
};

/// Mini-batch gradient descent on the mean squared error. Each epoch
/// shuffles the training rows with the shared deterministic shuffle, steps
/// through consecutive batches (the final short batch included), then logs
/// full-pass train and validation error. Training stops once the validation
/// error has not improved for `early_stop_patience` consecutive epochs, and
/// the parameters from the best epoch are returned. Passing an empty
/// validation set disables early stopping and runs all epochs (used when
/// refitting on merged data with a known epoch budget).
inline TrainResult train_network(const NetworkParams& start, const Matrix& X, const Vector& y,
                                 const Matrix& X_val, const Vector& y_val,
                                 const TrainConfig& cfg = {}) {
  if (X.rows() != y.size()) throw std::invalid_argument("train_network: row/label mismatch");
  if (X.rows() == 0) throw std::invalid_argument("train_network: empty training set");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.learning_rate < 0.0)
    throw std::invalid_argument("train_network: bad config");
  const bool has_val = X_val.rows() > 0;
  if (has_val && X_val.rows() != y_val.size())
    throw std::invalid_argument("train_network: validation row/label mismatch");

  NetworkParams net = start;
  TrainResult result;
  result.net = net;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto m = X.rows();
  detail::Gradients grads;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::deterministic_shuffle(order, rng);
    for (Eigen::Index begin = 0; begin < m; begin += cfg.batch_size) {
      const Eigen::Index size = std::min<Eigen::Index>(cfg.batch_size, m - begin);
      Matrix Xb(size, X.cols());
      Vector yb(size);
      for (Eigen::Index i = 0; i < size; ++i) {
        auto r = static_cast<Eigen::Index>(order[static_cast<std::size_t>(begin + i)]);
        Xb.row(i) = X.row(r);
        yb(i) = y(r);
      }
      detail::mse_gradients(net, Xb, yb, grads);
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        net.weights[l] -= cfg.learning_rate * grads.weights[l];
        net.biases[l] -= cfg.learning_rate * grads.biases[l];
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = batch_mse(net, X, y);
    if (!std::isfinite(rec.train_mse))
      throw std::runtime_error(
          "train_network: loss diverged; lower the learning rate or check feature scaling");
    if (has_val) {
      rec.val_mse = batch_mse(net, X_val, y_val);
      if (!std::isfinite(rec.val_mse))
        throw std::runtime_error(
            "train_network: validation loss diverged; lower the learning rate");
    }
    result.history.push_back(rec);

    const double monitored = has_val ? rec.val_mse : rec.train_mse;
    if (result.history.size() == 1 || monitored < result.best_val_mse) {
      result.best_val_mse = monitored;
      result.best_epoch = epoch;
      result.net = net;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (has_val && epochs_since_best > cfg.early_stop_patience) break;
    }
  }
  return result;
}

/// Maximum relative disagreement between backprop and central finite
/// differences of the full-batch loss, across every weight and bias. The
/// relative error of a pair (a, n) is |a-n|/max(|a|,|n|), taken as zero when
/// both magnitudes are below 1e-10.
inline double gradient_check(const NetworkParams& net, const Matrix& X, const Vector& y,
                             double eps = 1e-5) {
  detail::Gradients analytic;
  detail::mse_gradients(net, X, y, analytic);

  NetworkParams probe = net;
  auto loss_at = [&]() {
    return (predict(probe, X) - y).squaredNorm() / static_cast<double>(X.rows());
  };
  auto rel_err = [](double a, double n) {
    const double ma = std::abs(a), mn = std::abs(n);
    if (ma < 1e-10 && mn < 1e-10) return 0.0;
    return std::abs(a - n) / std::max(ma, mn);
  };

  double worst = 0.0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) {
        const double saved = probe.weights[l](r, c);
        probe.weights[l](r, c) = saved + eps;
        const double up = loss_at();
        probe.weights[l](r, c) = saved - eps;
        const double down = loss_at();
        probe.weights[l](r, c) = saved;
        worst = std::max(worst, rel_err(analytic.weights[l](r, c), (up - down) / (2 * eps)));
      }
    }
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) {
      const double saved = probe.biases[l](r);
      probe.biases[l](r) = saved + eps;
      const double up = loss_at();
      probe.biases[l](r) = saved - eps;
      const double down = loss_at();
      probe.biases[l](r) = saved;
      worst = std::max(worst, rel_err(analytic.biases[l](r), (up - down) / (2 * eps)));
    }
  }
  return worst;
}

inline void write_loss_csv(const std::vector<EpochRecord>& history, std::ostream& out) {
  write_csv_row(out, {"epoch", "train_mse", "val_mse"});
  for (const auto& rec : history)
    write_csv_row(out, {std::to_string(rec.epoch), format_double(rec.train_mse),
                        std::isnan(rec.val_mse) ? std::string{} : format_double(rec.val_mse)});
}

// --- serialization ------------------------------------------------------------

inline nlohmann::json to_json(const NetworkParams& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c)
        row.push_back(net.weights[l](r, c));
      rows.push_back(row);
    }
    nlohmann::json biases = nlohmann::json::array();
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) biases.push_back(net.biases[l](r));
    layers.push_back({{"weights", rows}, {"biases", biases}});
  }
  return {{"layers", layers}};
}

inline NetworkParams network_from_json(const nlohmann::json& j) {
  NetworkParams net;
  for (const auto& layer : j.at("layers")) {
    const auto& rows = layer.at("weights");
    if (rows.empty()) throw std::invalid_argument("network_from_json: empty weight matrix");
    Matrix W(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    const auto& biases = layer.at("biases");
    Vector b(static_cast<Eigen::Index>(biases.size()));
    for (std::size_t r = 0; r < biases.size(); ++r)
      b(static_cast<Eigen::Index>(r)) = biases[r].get<double>();
    net.weights.push_back(std::move(W));
    net.biases.push_back(std::move(b));
  }
  return net;
}

}  // namespace rentfit
