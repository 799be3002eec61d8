#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "nsde/tensor.hpp"

namespace nsde {

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// Compares backward() of a scalar function against central differences at x.
/// `tamper` post-processes the analytic gradient (identity by default); it lets
/// tests confirm a wrong gradient is reported.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double fd_step,
                         const std::function<void(std::vector<double>&)>& tamper = {}) {
  Tensor leaf = Tensor::parameter(x.rows(), x.cols(), std::vector<double>(x.values().begin(), x.values().end()));
  std::vector<double> analytic = backward(f(leaf)).of(leaf);
  if (tamper) tamper(analytic);

  std::vector<double> numeric(leaf.size());
  std::vector<double> base(leaf.values().begin(), leaf.values().end());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = [&](double delta) {
      std::vector<double> v = base;
      v[i] += delta;
      return f(Tensor::from(x.rows(), x.cols(), std::move(v))).item();
    };
    numeric[i] = (probe(fd_step) - probe(-fd_step)) / (2.0 * fd_step);
  }
  return max_relative_error(analytic, numeric);
}

/// Same check over a set of parameter leaves, perturbed in place and restored.
inline double grad_check_parameters(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                    double fd_step) {
  const Gradients grads = backward(loss_fn());
  std::vector<double> analytic, numeric;
  NoGradGuard no_grad;
  for (auto& p : params) {
    const auto g = grads.of(p);
    auto& w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double original = w[i];
      w[i] = original + fd_step;
      const double up = loss_fn().item();
      w[i] = original - fd_step;
      const double down = loss_fn().item();
      w[i] = original;
      analytic.push_back(g[i]);
      numeric.push_back((up - down) / (2.0 * fd_step));
    }
  }
  return max_relative_error(analytic, numeric);
}

}  // namespace nsde
