#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"
#include "hybrid/random.hpp"

namespace hybrid {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

/// Fully connected head u = W^T z + b with W stored d x K.
struct LinearModel {
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<double> weights;  // weights[j * k + c]
  std::vector<double> bias;     // length k
  std::vector<double> loss_history;  // per-epoch mean training loss

  LinearModel() = default;
  LinearModel(std::size_t d_, std::size_t k_) : d(d_), k(k_), weights(d_ * k_, 0.0), bias(k_, 0.0) {}

  double& w(std::size_t j, std::size_t c) { return weights[j * k + c]; }
  double w(std::size_t j, std::size_t c) const { return weights[j * k + c]; }
};

template <class T>
std::vector<double> linear_forward(const LinearModel& model, std::span<const T> z) {
  if (z.size() != model.d) throw InvalidInput("linear_forward: input dimension mismatch");
  std::vector<double> u(model.bias);
  for (std::size_t j = 0; j < model.d; ++j) {
    const double zj = static_cast<double>(z[j]);
    if (zj == 0.0) continue;
    const double* wj = model.weights.data() + j * model.k;
    for (std::size_t c = 0; c < model.k; ++c) u[c] += wj[c] * zj;
  }
  return u;
}

inline std::vector<double> linear_forward(const LinearModel& model, std::span<const float> z) {
  return linear_forward<float>(model, z);
}
inline std::vector<double> linear_forward(const LinearModel& model, std::span<const double> z) {
  return linear_forward<double>(model, z);
}

/// Max-shifted softmax. Rejects NaN; +/-inf logits are rejected as well.
inline std::vector<double> softmax(std::span<const double> u) {
  if (u.empty()) throw InvalidInput("softmax: empty logits");
  for (double v : u) {
    if (!std::isfinite(v)) throw InvalidInput("softmax: non-finite logit");
  }
  const double top = *std::max_element(u.begin(), u.end());
  std::vector<double> p(u.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    p[i] = std::exp(u[i] - top);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline constexpr double kLogFloor = 1e-12;

/// Mean categorical cross-entropy; each row of `probs` is a distribution and
/// each row of `onehot` a one-hot target.
inline double cross_entropy(const Matrix& probs, const Matrix& onehot) {
  if (probs.rows != onehot.rows || probs.cols != onehot.cols || probs.rows == 0) {
    throw InvalidInput("cross_entropy: shape mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    for (std::size_t c = 0; c < probs.cols; ++c) {
      if (onehot(i, c) != 0.0) total -= onehot(i, c) * std::log(std::max(probs(i, c), kLogFloor));
    }
  }
  return total / static_cast<double>(probs.rows);
}

struct HeadGradient {
  std::vector<double> weights;  // d x K, same layout as LinearModel::weights
  std::vector<double> bias;
  double loss = 0.0;
};

/// Gradient of the (optionally sample-weighted) mean cross-entropy with respect
/// to W and b. dL/du_k = (P_k - y_k) / N for uniform weights.
inline HeadGradient head_gradient(const LinearModel& model, const Matrix& features,
                                  const Matrix& onehot,
                                  std::span<const double> sample_weights = {}) {
  if (features.cols != model.d || onehot.cols != model.k || features.rows != onehot.rows ||
      features.rows == 0) {
    throw InvalidInput("head_gradient: shape mismatch");
  }
  if (!sample_weights.empty() && sample_weights.size() != features.rows) {
    throw InvalidInput("head_gradient: weight count mismatch");
  }
  double total_weight = 0.0;
  for (std::size_t i = 0; i < features.rows; ++i) {
    total_weight += sample_weights.empty() ? 1.0 : sample_weights[i];
  }
  HeadGradient g{std::vector<double>(model.d * model.k, 0.0), std::vector<double>(model.k, 0.0), 0.0};
  for (std::size_t i = 0; i < features.rows; ++i) {
    const double wi = (sample_weights.empty() ? 1.0 : sample_weights[i]) / total_weight;
    const auto z = features.row(i);
    const auto p = softmax(linear_forward(model, z));
    for (std::size_t c = 0; c < model.k; ++c) {
      if (onehot(i, c) != 0.0) g.loss -= wi * onehot(i, c) * std::log(std::max(p[c], kLogFloor));
      const double delta = wi * (p[c] - onehot(i, c));
      g.bias[c] += delta;
      if (delta == 0.0) continue;
      for (std::size_t j = 0; j < model.d; ++j) g.weights[j * model.k + c] += delta * z[j];
    }
  }
  return g;
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t size) : m(size, 0.0), v(size, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) throw InvalidInput("adam_step: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.eta * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double eta = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

/// Mini-batch Adam on the softmax cross-entropy. Weights start uniform in
/// [-1/sqrt(d), 1/sqrt(d)], bias at zero. The trailing partial batch is kept.
inline LinearModel train_softmax_head(const Dataset& ds, const TrainConfig& cfg,
                                      std::span<const double> sample_weights = {}) {
  if (!ds.has_labels() || ds.n() == 0) throw InvalidInput("train_softmax_head: empty dataset");
  if (cfg.epochs == 0) throw InvalidInput("train_softmax_head: epochs must be >= 1");
  if (cfg.batch_size == 0) throw InvalidInput("train_softmax_head: batch_size must be >= 1");
  if (!sample_weights.empty() && sample_weights.size() != ds.n()) {
    throw InvalidInput("train_softmax_head: weight count mismatch");
  }
  const std::size_t d = ds.d(), k = ds.k(), n = ds.n();
  LinearModel model(d, k);
  {
    Rng init(cfg.seed, "softmax_head_init");
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(d, 1)));
    for (auto& w : model.weights) w = init.uniform(-bound, bound);
  }
  AdamState adam(d * k + k);
  adam.eta = cfg.eta;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.eps;

  std::vector<double> params(d * k + k);
  std::vector<double> grads(d * k + k);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffler(cfg.seed, "softmax_head_shuffle");

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, shuffler);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      Matrix x(len, d), y(len, k);
      std::vector<double> bw;
      if (!sample_weights.empty()) bw.resize(len);
      for (std::size_t b = 0; b < len; ++b) {
        const std::size_t i = order[start + b];
        const auto r = ds.row(i);
        std::copy(r.begin(), r.end(), x.row(b).begin());
        y(b, ds.label(i)) = 1.0;
        if (!bw.empty()) bw[b] = sample_weights[i];
      }
      const auto g = head_gradient(model, x, y, bw);
      epoch_loss += g.loss * static_cast<double>(len);
      std::copy(model.weights.begin(), model.weights.end(), params.begin());
      std::copy(model.bias.begin(), model.bias.end(), params.begin() + static_cast<std::ptrdiff_t>(d * k));
      std::copy(g.weights.begin(), g.weights.end(), grads.begin());
      std::copy(g.bias.begin(), g.bias.end(), grads.begin() + static_cast<std::ptrdiff_t>(d * k));
      adam_step(adam, params, grads);
      std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(d * k), model.weights.begin());
      std::copy(params.begin() + static_cast<std::ptrdiff_t>(d * k), params.end(), model.bias.begin());
    }
    model.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

inline std::vector<double> predict_proba(const LinearModel& model, FeatureVector x) {
  return softmax(linear_forward(model, x));
}

}  // namespace hybrid
