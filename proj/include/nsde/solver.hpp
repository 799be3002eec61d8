#pragma once

// Fixed-step Euler-Maruyama / Milstein integration on the tape
// (discretise-then-optimise: backward() through a Trajectory differentiates the
// discrete rollout exactly).

#include <cmath>
#include <concepts>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsde/brownian.hpp"
#include "nsde/errors.hpp"
#include "nsde/model.hpp"
#include "nsde/path.hpp"
#include "nsde/tensor.hpp"

namespace nsde {

enum class SolverScheme { euler, milstein };

inline std::string to_string(SolverScheme s) { return s == SolverScheme::euler ? "euler" : "milstein"; }
inline SolverScheme parse_solver_scheme(const std::string& s) {
  if (s == "euler") return SolverScheme::euler;
  if (s == "milstein") return SolverScheme::milstein;
  throw ValidationError("unknown solver scheme '" + s + "'");
}

struct SolveConfig {
  SolverScheme scheme = SolverScheme::euler;
  std::size_t n_steps = 100;
  double horizon = 1.0;  // T
  double explosion_threshold = 1e6;
  bool record_states = true;
  // Throw NumericalExplosion on the first bad row; otherwise zero the row and flag it.
  bool throw_on_explosion = true;

  double dt() const { return horizon / static_cast<double>(n_steps); }
};

struct Trajectory {
  std::vector<double> times;   // t_0 .. t_K
  std::vector<Tensor> states;  // z(t_k), when recorded
  Tensor terminal;             // z(T)
  std::vector<long> exploded_at;  // per row: step index, or -1
  std::vector<std::string> warnings;

  std::size_t exploded_count() const {
    std::size_t n = 0;
    for (long e : exploded_at) n += e >= 0;
    return n;
  }
};

/// What the solver needs from a vector-field bundle.
template <class S>
concept StochasticSystem = requires(const S& s, double t, const Tensor& z, const PathInputs& x) {
  { s.kind() } -> std::convertible_to<ModelKind>;
  { s.drift(t, z, x) } -> std::convertible_to<Tensor>;
  { s.diffusion(t, z) } -> std::convertible_to<Tensor>;
  { s.diffusion_slope(t, z) } -> std::convertible_to<std::optional<Tensor>>;
  { s.growth_rate(t, z, x) } -> std::convertible_to<Tensor>;
  { s.noise_scale(t) } -> std::convertible_to<Tensor>;
  { s.additive_noise() } -> std::convertible_to<bool>;
};

/// Hand-written fields (closed-form oracles, stress tests) behind the same interface.
struct FunctionalSystem {
  ModelKind system_kind = ModelKind::lsde;
  std::function<Tensor(double, const Tensor&, const PathInputs&)> drift_fn;
  std::function<Tensor(double, const Tensor&)> diffusion_fn;
  std::function<std::optional<Tensor>(double, const Tensor&)> slope_fn;
  std::function<Tensor(double, const Tensor&, const PathInputs&)> growth_fn;
  std::function<Tensor(double)> noise_fn;
  bool additive = false;

  ModelKind kind() const { return system_kind; }
  Tensor drift(double t, const Tensor& z, const PathInputs& x) const { return drift_fn(t, z, x); }
  Tensor diffusion(double t, const Tensor& z) const {
    return diffusion_fn ? diffusion_fn(t, z) : Tensor::zeros(z.rows(), z.cols());
  }
  std::optional<Tensor> diffusion_slope(double t, const Tensor& z) const {
    if (slope_fn) return slope_fn(t, z);
    if (additive) return Tensor::zeros(z.rows(), z.cols());
    return std::nullopt;
  }
  Tensor growth_rate(double t, const Tensor& z, const PathInputs& x) const { return growth_fn(t, z, x); }
  Tensor noise_scale(double t) const { return noise_fn(t); }
  bool additive_noise() const { return additive; }
};

using StepObserver = std::function<void(std::size_t step, double t, const Tensor& z)>;

namespace detail {

// Rows whose state is non-finite or whose 2-norm exceeds the threshold.
inline std::vector<std::size_t> bad_rows(const Tensor& z, double threshold) {
  std::vector<std::size_t> out;
  const auto v = z.values();
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double s = 0.0;
    bool finite = true;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      const double x = v[i * z.cols() + j];
      finite = finite && std::isfinite(x);
      s += x * x;
    }
    if (!finite || !(std::sqrt(s) <= threshold)) out.push_back(i);
  }
  return out;
}

inline std::vector<std::uint8_t> row_mask(std::size_t rows, std::size_t cols, const std::vector<std::size_t>& bad) {
  std::vector<std::uint8_t> keep(rows * cols, 1);
  for (auto r : bad) std::fill_n(keep.begin() + static_cast<long>(r * cols), cols, 0);
  return keep;
}

}  // namespace detail

/// Integrates from a given initial state. `paths` holds one controlled path per
/// row (or is empty for systems that ignore X).
template <StochasticSystem System>
Trajectory solve_from(const System& system, const Tensor& z0, std::span<const ControlledPath* const> paths,
                      const BrownianBatch& bm, const SolveConfig& cfg, const StepObserver& observer = {}) {
  if (cfg.n_steps == 0 || !(cfg.horizon > 0.0)) throw ValidationError("solve: need n_steps >= 1 and T > 0");
  const std::size_t batch = z0.rows(), dim = z0.cols();
  if (bm.batch() != batch || bm.dim() != dim) throw ShapeError("solve: Brownian batch does not match the state");
  if (bm.n_steps() % cfg.n_steps != 0) throw ShapeError("solve: Brownian grid is not a refinement of the solver grid");
  const std::size_t aggregate = bm.n_steps() / cfg.n_steps;
  const double dt = cfg.dt();
  if (std::fabs(bm.dt() * static_cast<double>(aggregate) - dt) > 1e-12 * dt) {
    throw ShapeError("solve: Brownian dt does not match the solver step");
  }
  if (!paths.empty() && paths.size() != batch) throw ShapeError("solve: one path per batch row required");

  const ModelKind kind = system.kind();
  Trajectory traj;
  traj.exploded_at.assign(batch, -1);
  traj.times.resize(cfg.n_steps + 1);
  for (std::size_t k = 0; k <= cfg.n_steps; ++k) traj.times[k] = static_cast<double>(k) * dt;
  traj.times.back() = cfg.horizon;

  bool milstein = cfg.scheme == SolverScheme::milstein;
  const bool stochastic = kind != ModelKind::node && kind != ModelKind::ncde;
  if (milstein && kind == ModelKind::naive_sde) {
    milstein = false;
    traj.warnings.push_back("milstein has no closed-form correction for naive-sde; using euler");
  }
  // In log space the geometric model has additive noise, so Milstein coincides with Euler.
  if (milstein && (kind == ModelKind::gsde || !stochastic || system.additive_noise())) milstein = false;

  Tensor z = z0;
  Tensor y;                             // gsde log-state
  std::vector<std::uint8_t> alive;      // gsde: components not absorbed at 0
  if (kind == ModelKind::gsde) {
    alive.resize(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) {
      const double v = z0.values()[i];
      if (v < 0.0) throw NegativeStateGSDE("gsde initial state has a negative component");
      alive[i] = v > 0.0;
    }
    y = log(where(alive, z0, Tensor::full(batch, dim, 1.0)));
  }
  if (cfg.record_states) traj.states.push_back(z);
  if (observer) observer(0, 0.0, z);

  const Tensor zeros = Tensor::zeros(batch, dim);
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const double t = traj.times[k];
    PathInputs x;
    if (!paths.empty()) {
      x.value = eval_batch(paths, t, 0);
      if (kind == ModelKind::ncde) {
        // X is held constant outside its observation window.
        const std::size_t c = paths.front()->channels();
        std::vector<double> d(batch * c, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          if (t >= paths[b]->t_begin() && t < paths[b]->t_end()) paths[b]->evaluate_into(t, 1, d.data() + b * c);
        }
        x.deriv = Tensor::from(batch, c, std::move(d));
      }
    }

    Tensor next;
    if (kind == ModelKind::gsde) {
      const Tensor dw = bm.increment(k, aggregate);
      const Tensor s = system.noise_scale(t);
      y = y + (system.growth_rate(t, z, x) - square(s) * 0.5) * dt + s * dw;
      next = where(alive, exp(y), zeros);
      for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = alive[i] && next.values()[i] != 0.0;
    } else if (!stochastic) {
      next = z + system.drift(t, z, x) * dt;
    } else {
      const Tensor dw = bm.increment(k, aggregate);
      const Tensor g = system.diffusion(t, z);
      next = z + system.drift(t, z, x) * dt + g * dw;
      if (milstein) {
        const std::optional<Tensor> slope = system.diffusion_slope(t, z);
        if (!slope) {
          milstein = false;
          traj.warnings.push_back("diffusion has no closed-form derivative; using euler");
        } else {
          next = next + g * *slope * (square(dw) + (-dt)) * 0.5;
        }
      }
    }

    // Rows that have exploded stay frozen at zero for the rest of the solve.
    auto bad = detail::bad_rows(next, cfg.explosion_threshold);
    bool fresh_any = false;
    for (auto r : bad) {
      if (traj.exploded_at[r] >= 0) continue;
      if (cfg.throw_on_explosion) throw NumericalExplosion(k + 1, r);
      traj.exploded_at[r] = static_cast<long>(k + 1);
      fresh_any = true;
    }
    if (fresh_any || traj.exploded_count() > 0) {
      std::vector<std::size_t> dead;
      for (std::size_t r = 0; r < batch; ++r) {
        if (traj.exploded_at[r] >= 0) dead.push_back(r);
      }
      const auto keep = detail::row_mask(batch, dim, dead);
      next = where(keep, next, zeros);
      if (kind == ModelKind::gsde) {
        y = where(keep, y, zeros);
        for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = alive[i] && keep[i];
      }
    }
    z = next;
    if (cfg.record_states) traj.states.push_back(z);
    if (observer) observer(k + 1, traj.times[k + 1], z);
  }
  traj.terminal = z;
  return traj;
}

/// First-knot values X(t_0) (channels 1..d_x) of each path, [B, d_x].
inline Tensor initial_observations(std::span<const ControlledPath* const> paths) {
  const std::size_t c = paths.front()->channels();
  std::vector<double> out;
  out.reserve(paths.size() * (c - 1));
  for (const auto* p : paths) {
    const auto v = p->eval(p->t_begin());
    out.insert(out.end(), v.begin() + 1, v.end());
  }
  return Tensor::from(paths.size(), c - 1, std::move(out));
}

/// Full model solve: z0 = init_state(h, x0), then integrate. The vector fields carry
/// no dropout, so `mode` does not change the trajectory.
inline Trajectory solve(const SdeModel& model, std::span<const ControlledPath* const> paths,
                        const BrownianBatch& bm, const SolveConfig& cfg, Mode mode = Mode::eval,
                        const StepObserver& observer = {}) {
  (void)mode;
  if (paths.empty()) throw ShapeError("solve: at least one path required");
  const Tensor z0 = init_state(model, initial_observations(paths));
  return solve_from(model, z0, paths, bm, cfg, observer);
}

inline Trajectory solve(const SdeModel& model, const ControlledPath& path, const BrownianGrid& grid,
                        const SolveConfig& cfg, Mode mode = Mode::eval) {
  const ControlledPath* p = &path;
  return solve(model, std::span<const ControlledPath* const>(&p, 1), BrownianBatch::from_grid(grid), cfg, mode);
}

}  // namespace nsde
