#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nsde/errors.hpp"
#include "nsde/rng.hpp"
#include "nsde/tensor.hpp"

namespace nsde {

enum class Activation { relu, tanh, sigmoid, identity };
enum class Mode { train, eval };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + s + "'");
}

inline Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::identity: return x;
  }
  return x;
}

/// Upper bound on |act'|.
inline double activation_slope_bound(Activation a) {
  return a == Activation::sigmoid ? 0.25 : 1.0;
}

struct Layer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [1, out]
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct Mlp {
  std::vector<Layer> layers;
  bool final_tanh = false;
  double dropout_rate = 0.0;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  /// Weights then bias, layer by layer.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  Mlp clone() const {
    Mlp m = *this;
    for (auto& l : m.layers) {
      l.weight = l.weight.clone();
      l.bias = l.bias.clone();
    }
    return m;
  }
};

/// Glorot-uniform weights, zero biases. Hidden layers use `activation`; the last
/// layer is tanh when final_tanh is set, identity otherwise.
inline Mlp mlp_init(std::size_t in_dim, const std::vector<std::size_t>& hidden_dims,
                    std::size_t out_dim, Activation activation, bool final_tanh,
                    std::uint64_t seed, double dropout_rate = 0.0) {
  if (in_dim == 0 || out_dim == 0) throw ValidationError("mlp_init: dimensions must be positive");
  for (auto h : hidden_dims) {
    if (h == 0) throw ValidationError("mlp_init: hidden dimensions must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("mlp_init: dropout rate must lie in [0, 1)");
  }
  Rng rng(seed);
  Mlp mlp;
  mlp.final_tanh = final_tanh;
  mlp.dropout_rate = dropout_rate;
  std::vector<std::size_t> dims{in_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(out_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = rng.uniform(-limit, limit);
    const bool last = l + 2 == dims.size();
    Layer layer;
    layer.weight = Tensor::parameter(fan_out, fan_in, std::move(w));
    layer.bias = Tensor::parameter(1, fan_out, std::vector<double>(fan_out, 0.0));
    layer.activation = last ? (final_tanh ? Activation::tanh : Activation::identity) : activation;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

/// Inverted-dropout mask (kept units scaled by 1/(1-rate)); a pure function of the seed.
inline Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, std::uint64_t seed) {
  std::vector<double> m(rows * cols);
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double u = bits_to_open_unit(splitmix64(seed ^ splitmix64(i + 1)));
    m[i] = u < rate ? 0.0 : keep;
  }
  return Tensor::from(rows, cols, std::move(m));
}

inline Tensor forward(const Mlp& mlp, const Tensor& x, Mode mode = Mode::eval,
                      std::uint64_t dropout_seed = 0) {
  if (x.cols() != mlp.in_dim()) {
    throw ShapeError("mlp forward: input has " + std::to_string(x.cols()) +
                     " columns, network expects " + std::to_string(mlp.in_dim()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const Layer& layer = mlp.layers[l];
    h = activate(linear(h, layer.weight, layer.bias), layer.activation);
    const bool hidden = l + 1 < mlp.layers.size();
    if (hidden && mode == Mode::train && mlp.dropout_rate > 0.0) {
      h = h * dropout_mask(h.rows(), h.cols(), mlp.dropout_rate, derive_seed(dropout_seed, {l}));
    }
  }
  return h;
}

/// Largest singular value by power iteration on W^T W.
inline double spectral_norm(const Tensor& w, double rel_tol = 1e-6, int max_iter = 100000) {
  const std::size_t rows = w.rows(), cols = w.cols();
  const auto wv = w.values();
  std::vector<double> v(cols), u(rows);
  for (std::size_t j = 0; j < cols; ++j) v[j] = 1.0 + 0.01 * static_cast<double>(j % 7);
  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    double vn = 0.0;
    for (double x : v) vn += x * x;
    vn = std::sqrt(vn);
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += wv[i * cols + j] * v[j];
      u[i] = acc;
    }
    double un = 0.0;
    for (double x : u) un += x * x;
    un = std::sqrt(un);
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < rows; ++i) acc += wv[i * cols + j] * u[i];
      v[j] = acc;
    }
    if (it > 0 && std::fabs(un - estimate) <= rel_tol * un) {
      estimate = un;
      break;
    }
    estimate = un;
  }
  // Power iteration approaches from below; pad by the tolerance.
  return estimate * (1.0 + rel_tol);
}

inline double lipschitz_upper_bound(const Mlp& mlp) {
  double bound = 1.0;
  for (const auto& layer : mlp.layers) {
    bound *= spectral_norm(layer.weight) * activation_slope_bound(layer.activation);
  }
  return bound;
}

}  // namespace nsde
