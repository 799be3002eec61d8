#pragma once

// Dense 2-D tensors of doubles with tape-based reverse-mode differentiation.
//
// Every tensor is a (rows x cols) row-major block. Batched computations keep the
// batch on the row axis. Binary element-wise operations broadcast any operand
// axis of length 1, which covers the [1,d] row vectors and [1,1] scalars the
// vector fields need.
//
// A Tensor is a handle: copies share the same node. Use clone() for an
// independent leaf.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nsde/errors.hpp"

namespace nsde {

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  std::uint64_t id = 0;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Long solver tapes would otherwise recurse once per recorded step on teardown.
  ~Node() {
    std::vector<std::shared_ptr<Node>> pending = std::move(parents);
    while (!pending.empty()) {
      std::shared_ptr<Node> p = std::move(pending.back());
      pending.pop_back();
      if (p && p.use_count() == 1) {
        for (auto& q : p->parents) pending.push_back(std::move(q));
        p->parents.clear();
        p->backward = nullptr;
      }
    }
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false) {
    if (values.size() != rows * cols) {
      throw ShapeError("tensor value count " + std::to_string(values.size()) +
                       " does not match shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->id = detail::next_node_id();
    return Tensor(std::move(n));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return from(rows, cols, std::vector<double>(rows * cols, 0.0));
  }
  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    return from(rows, cols, std::vector<double>(rows * cols, v));
  }
  static Tensor scalar(double v) { return from(1, 1, {v}); }
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return from(1, n, std::move(values));
  }
  /// Trainable leaf.
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return from(rows, cols, std::move(values), true);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::uint64_t id() const { return node_->id; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty(); }

  std::span<const double> values() const& { return node_->value; }
  // A temporary tensor hands out a copy so range-for over it stays valid.
  std::vector<double> values() && { return node_->value; }
  /// Direct access for optimizer updates and test fixtures; bypasses the tape.
  std::vector<double>& mutable_values() { return node_->value; }
  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on a non-scalar tensor");
    return node_->value[0];
  }

  /// Same values, cut from the tape.
  Tensor detach() const { return from(rows(), cols(), node_->value); }
  /// Independent copy with the same requires_grad flag.
  Tensor clone() const { return from(rows(), cols(), node_->value, requires_grad()); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  n->id = next_node_id();
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& t : inputs) n->parents.push_back(t.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline void accumulate(Node& parent, std::size_t i, double g) {
  if (parent.requires_grad) parent.grad[i] += g;
}

inline std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(std::string("incompatible shapes for ") + op);
}

template <class Forward, class Backward>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Forward f, Backward df) {
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), name);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), name);
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(rows * cols);
  const bool same = ar == rows && ac == cols && br == rows && bc == cols;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double x = av[(ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j)];
        const double y = bv[(br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j)];
        out[i * cols + j] = f(x, y);
      }
    }
  }
  return make_result(rows, cols, std::move(out), {a, b},
                     [rows, cols, ar, ac, br, bc, df](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       for (std::size_t i = 0; i < rows; ++i) {
                         for (std::size_t j = 0; j < cols; ++j) {
                           const std::size_t ia = (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j);
                           const std::size_t ib = (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j);
                           const double g = self.grad[i * cols + j];
                           if (g == 0.0) continue;
                           const auto [ga, gb] = df(pa.value[ia], pb.value[ib], self.value[i * cols + j]);
                           accumulate(pa, ia, g * ga);
                           accumulate(pb, ib, g * gb);
                         }
                       }
                     });
}

// df receives (input, output) and returns d output / d input.
template <class Forward, class Derivative>
Tensor unary_op(const Tensor& a, Forward f, Derivative df) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(a.rows(), a.cols(), std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (g != 0.0) p.grad[i] += g * df(p.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return std::pair{1.0, 1.0}; });
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return std::pair{1.0, -1.0}; });
}

inline Tensor operator*(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double) { return std::pair{y, x}; });
}

inline Tensor operator/(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y, double) { return std::pair{1.0 / y, -x / (y * y)}; });
}

inline Tensor operator*(const Tensor& a, double s) {
  return detail::unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}
inline Tensor operator*(double s, const Tensor& a) { return a * s; }

inline Tensor operator+(const Tensor& a, double s) {
  return detail::unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor operator-(const Tensor& a) { return a * -1.0; }

// ---------------------------------------------------------------------------
// Element-wise functions

inline Tensor tanh(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// |x|^3 element-wise.
inline Tensor abs_cube(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::fabs(x) * x * x; },
      [](double x, double) { return 3.0 * x * std::fabs(x); });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// x[B,in] * W[out,in]^T + b[1,out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.rows(), in = x.cols(), out = w.rows();
  if (w.cols() != in) {
    throw ShapeError("linear: input has " + std::to_string(in) + " columns, weight expects " +
                     std::to_string(w.cols()));
  }
  if (b.rows() != 1 || b.cols() != out) throw ShapeError("linear: bias shape mismatch");
  const auto xv = x.values();
  const auto wv = w.values();
  const auto bv = b.values();
  std::vector<double> y(batch * out);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* xi = xv.data() + i * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = wv.data() + o * in;
      double acc = bv[o];
      for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
      y[i * out + o] = acc;
    }
  }
  return detail::make_result(batch, out, std::move(y), {x, w, b},
                             [batch, in, out](detail::Node& self) {
                               detail::Node& px = *self.parents[0];
                               detail::Node& pw = *self.parents[1];
                               detail::Node& pb = *self.parents[2];
                               for (std::size_t i = 0; i < batch; ++i) {
                                 const double* gi = self.grad.data() + i * out;
                                 const double* xi = px.value.data() + i * in;
                                 for (std::size_t o = 0; o < out; ++o) {
                                   const double g = gi[o];
                                   if (g == 0.0) continue;
                                   if (pb.requires_grad) pb.grad[o] += g;
                                   const double* wo = pw.value.data() + o * in;
                                   if (px.requires_grad) {
                                     double* gx = px.grad.data() + i * in;
                                     for (std::size_t k = 0; k < in; ++k) gx[k] += g * wo[k];
                                   }
                                   if (pw.requires_grad) {
                                     double* gw = pw.grad.data() + o * in;
                                     for (std::size_t k = 0; k < in; ++k) gw[k] += g * xi[k];
                                   }
                                 }
                               }
                             });
}

/// Row-wise matrix-vector product: m[B, r*c] viewed as B matrices (r x c), v[B,c] -> [B,r].
inline Tensor batched_matvec(const Tensor& m, const Tensor& v, std::size_t r) {
  const std::size_t batch = v.rows(), c = v.cols();
  if (m.rows() != batch || m.cols() != r * c) throw ShapeError("batched_matvec: shape mismatch");
  const auto mv = m.values();
  const auto vv = v.values();
  std::vector<double> out(batch * r, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += mv[b * r * c + i * c + j] * vv[b * c + j];
      out[b * r + i] = acc;
    }
  }
  return detail::make_result(batch, r, std::move(out), {m, v}, [batch, r, c](detail::Node& self) {
    detail::Node& pm = *self.parents[0];
    detail::Node& pv = *self.parents[1];
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        const double g = self.grad[b * r + i];
        if (g == 0.0) continue;
        for (std::size_t j = 0; j < c; ++j) {
          detail::accumulate(pm, b * r * c + i * c + j, g * pv.value[b * c + j]);
          detail::accumulate(pv, b * c + j, g * pm.value[b * r * c + i * c + j]);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::size_t rows = 1;
  for (const auto& p : parts) rows = std::max(rows, p.rows());
  std::vector<std::size_t> offsets;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows && p.rows() != 1) throw ShapeError("concat_cols: row mismatch");
    offsets.push_back(cols);
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    const std::size_t pc = parts[k].cols(), pr = parts[k].rows();
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t src = (pr == 1 ? 0 : i) * pc;
      std::copy_n(pv.data() + src, pc, out.data() + i * cols + offsets[k]);
    }
  }
  return detail::make_result(rows, cols, std::move(out), parts,
                             [rows, cols, offsets](detail::Node& self) {
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 detail::Node& p = *self.parents[k];
                                 if (!p.requires_grad) continue;
                                 for (std::size_t i = 0; i < rows; ++i) {
                                   const std::size_t dst = (p.rows == 1 ? 0 : i) * p.cols;
                                   for (std::size_t j = 0; j < p.cols; ++j) {
                                     p.grad[dst + j] += self.grad[i * cols + offsets[k] + j];
                                   }
                                 }
                               }
                             });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t rows = a.rows(), in_cols = a.cols(), cols = end - begin;
  const auto av = a.values();
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(av.data() + i * in_cols + begin, cols, out.data() + i * cols);
  }
  return detail::make_result(rows, cols, std::move(out), {a},
                             [rows, cols, in_cols, begin](detail::Node& self) {
                               detail::Node& p = *self.parents[0];
                               for (std::size_t i = 0; i < rows; ++i) {
                                 for (std::size_t j = 0; j < cols; ++j) {
                                   p.grad[i * in_cols + begin + j] += self.grad[i * cols + j];
                                 }
                               }
                             });
}

/// Repeats a [1,c] row to [rows,c]; other shapes must already match.
inline Tensor broadcast_rows(const Tensor& a, std::size_t rows) {
  if (a.rows() == rows) return a;
  if (a.rows() != 1) throw ShapeError("broadcast_rows: source must have one row");
  return a + Tensor::zeros(rows, a.cols());
}

/// Element-wise select: mask[i] ? a[i] : b[i]. Shapes must match exactly.
inline Tensor where(const std::vector<std::uint8_t>& mask, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || mask.size() != a.size()) {
    throw ShapeError("where: shape mismatch");
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? av[i] : bv[i];
  return detail::make_result(a.rows(), a.cols(), std::move(out), {a, b},
                             [mask](detail::Node& self) {
                               detail::Node& pa = *self.parents[0];
                               detail::Node& pb = *self.parents[1];
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 if (mask[i]) {
                                   detail::accumulate(pa, i, self.grad[i]);
                                 } else {
                                   detail::accumulate(pb, i, self.grad[i]);
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_result(1, 1, {s}, {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    for (double& g : p.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

/// Weighted mean over rows of softmax cross-entropy. Rows with zero weight are ignored.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                                    std::vector<double> weights = {}) {
  const std::size_t batch = logits.rows(), classes = logits.cols();
  if (labels.size() != batch) throw ShapeError("softmax_cross_entropy: label count mismatch");
  if (weights.empty()) weights.assign(batch, 1.0);
  if (weights.size() != batch) throw ShapeError("softmax_cross_entropy: weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  const auto lv = logits.values();
  std::vector<double> probs(batch * classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValidationError("label " + std::to_string(y) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
    const double* row = lv.data() + i * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(row[c] - lse);
    if (weights[i] != 0.0) loss += weights[i] * (lse - row[y]);
  }
  const double scale = wsum > 0.0 ? 1.0 / wsum : 0.0;
  return detail::make_result(
      1, 1, {loss * scale}, {logits},
      [batch, classes, labels, weights, probs, scale](detail::Node& self) {
        detail::Node& p = *self.parents[0];
        const double g = self.grad[0] * scale;
        for (std::size_t i = 0; i < batch; ++i) {
          if (weights[i] == 0.0) continue;
          for (std::size_t c = 0; c < classes; ++c) {
            const double onehot = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
            p.grad[i * classes + c] += g * weights[i] * (probs[i * classes + c] - onehot);
          }
        }
      });
}

/// Mean squared error over entries where mask is set (all entries when mask is empty).
inline Tensor masked_mse(const Tensor& pred, const Tensor& target, std::vector<std::uint8_t> mask = {}) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("mse: shape mismatch");
  }
  if (mask.empty()) mask.assign(pred.size(), 1);
  std::vector<double> w(mask.size());
  double count = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    w[i] = mask[i] ? 1.0 : 0.0;
    count += w[i];
  }
  if (count == 0.0) return Tensor::scalar(0.0);
  const Tensor weights = Tensor::from(pred.rows(), pred.cols(), std::move(w));
  return sum(square(pred - target) * weights) * (1.0 / count);
}

// ---------------------------------------------------------------------------
// Backward pass

/// Gradients of a scalar with respect to every trainable leaf reachable from it.
class Gradients {
 public:
  /// Gradient for a leaf; zeros when the leaf did not influence the loss.
  std::vector<double> of(const Tensor& t) const {
    auto it = by_id_.find(t.id());
    if (it == by_id_.end()) return std::vector<double>(t.size(), 0.0);
    return it->second;
  }
  bool contains(const Tensor& t) const { return by_id_.count(t.id()) != 0; }
  const std::unordered_map<std::uint64_t, std::vector<double>>& map() const { return by_id_; }
  std::unordered_map<std::uint64_t, std::vector<double>>& map() { return by_id_; }

 private:
  std::unordered_map<std::uint64_t, std::vector<double>> by_id_;
};

inline Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw ShapeError("backward: loss must be a scalar");
  Gradients out;
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (detail::Node* n : order) {
    if (n->parents.empty()) out.map()[n->id] = n->grad;
    if (!n->parents.empty()) std::vector<double>().swap(n->grad);
  }
  return out;
}

}  // namespace nsde
