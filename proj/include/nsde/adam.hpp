#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nsde/errors.hpp"
#include "nsde/tensor.hpp"

namespace nsde {

/// Parameters sharing one learning-rate multiplier.
struct ParamGroup {
  std::string name;
  std::vector<Tensor> params;
  double lr_multiplier = 1.0;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  // Indexed [group][param] like the groups passed to adam_step.
  std::vector<std::vector<std::vector<double>>> m;
  std::vector<std::vector<std::vector<double>>> v;
};

inline double global_grad_norm(const std::vector<ParamGroup>& groups, const Gradients& grads) {
  double s = 0.0;
  for (const auto& g : groups) {
    for (const auto& p : g.params) {
      auto it = grads.map().find(p.id());
      if (it == grads.map().end()) continue;
      for (double x : it->second) s += x * x;
    }
  }
  return std::sqrt(s);
}

/// Rescales gradients in place so their global 2-norm is at most max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(const std::vector<ParamGroup>& groups, Gradients& grads, double max_norm) {
  const double norm = global_grad_norm(groups, grads);
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [id, g] : grads.map()) {
      for (double& x : g) x *= scale;
    }
  }
  return norm;
}

/// One bias-corrected Adam update; group g moves at lr * groups[g].lr_multiplier.
inline void adam_step(std::vector<ParamGroup>& groups, const Gradients& grads, AdamState& state) {
  for (const auto& g : groups) {
    for (const auto& p : g.params) {
      auto it = grads.map().find(p.id());
      if (it == grads.map().end()) continue;
      if (it->second.size() != p.size()) throw ShapeError("adam_step: gradient shape mismatch");
      for (double x : it->second) {
        if (!std::isfinite(x)) throw AbortNonFinite("adam_step: non-finite gradient in group '" + g.name + "'");
      }
    }
  }
  if (state.m.size() != groups.size()) {
    state.m.assign(groups.size(), {});
    state.v.assign(groups.size(), {});
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (state.m[gi].size() != groups[gi].params.size()) {
      state.m[gi].clear();
      state.v[gi].clear();
      for (const auto& p : groups[gi].params) {
        state.m[gi].emplace_back(p.size(), 0.0);
        state.v[gi].emplace_back(p.size(), 0.0);
      }
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const double lr = state.lr * groups[gi].lr_multiplier;
    for (std::size_t pi = 0; pi < groups[gi].params.size(); ++pi) {
      Tensor& p = groups[gi].params[pi];
      auto it = grads.map().find(p.id());
      if (it == grads.map().end()) continue;
      const auto& g = it->second;
      auto& m = state.m[gi][pi];
      auto& v = state.v[gi][pi];
      auto& w = p.mutable_values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
  }
}

}  // namespace nsde
