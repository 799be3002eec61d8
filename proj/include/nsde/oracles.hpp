#pragma once

// Closed-form SDEs behind the solver interface, and the strong-error study built on them.

#include <cmath>
#include <vector>

#include "nsde/brownian.hpp"
#include "nsde/rng.hpp"
#include "nsde/solver.hpp"

namespace nsde {

/// dz = mu z dt + sigma z dW in the original coordinates (Euler / Milstein see the
/// multiplicative noise directly).
inline FunctionalSystem gbm_system(double mu, double sigma) {
  FunctionalSystem s;
  s.system_kind = ModelKind::lnsde;
  s.drift_fn = [mu](double, const Tensor& z, const PathInputs&) { return z * mu; };
  s.diffusion_fn = [sigma](double, const Tensor& z) { return z * sigma; };
  s.slope_fn = [sigma](double, const Tensor& z) -> std::optional<Tensor> {
    return Tensor::full(z.rows(), z.cols(), sigma);
  };
  return s;
}

/// Same process as a geometric system with constant growth mu and noise scale sigma.
inline FunctionalSystem geometric_system(double mu, double sigma) {
  FunctionalSystem s;
  s.system_kind = ModelKind::gsde;
  s.growth_fn = [mu](double, const Tensor& z, const PathInputs&) { return Tensor::full(z.rows(), z.cols(), mu); };
  s.drift_fn = [mu](double, const Tensor& z, const PathInputs&) { return z * mu; };
  s.diffusion_fn = [sigma](double, const Tensor& z) { return z * sigma; };
  s.noise_fn = [sigma](double) { return Tensor::scalar(sigma); };
  return s;
}

/// dz = -theta z dt + sigma dW.
inline FunctionalSystem ou_system(double theta, double sigma) {
  FunctionalSystem s;
  s.system_kind = ModelKind::lsde;
  s.additive = true;
  s.drift_fn = [theta](double, const Tensor& z, const PathInputs&) { return z * -theta; };
  s.diffusion_fn = [sigma](double, const Tensor& z) { return Tensor::full(z.rows(), z.cols(), sigma); };
  return s;
}

/// dz = -m z dt + sigma z dW: dissipative drift with linear noise.
inline FunctionalSystem dissipative_system(double m, double sigma) {
  FunctionalSystem s = gbm_system(-m, sigma);
  return s;
}

/// Closed-form GBM terminal value given the path's total increment W(T).
inline double gbm_exact(double z0, double mu, double sigma, double T, double w_T) {
  return z0 * std::exp((mu - 0.5 * sigma * sigma) * T + sigma * w_T);
}

/// Least-squares slope of y on x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct StrongErrorReport {
  std::vector<double> dts;
  std::vector<double> errors;  // E|z_dt(T) - z(T)|
  double slope = 0.0;
};

struct GbmParams {
  double mu = 0.05;
  double sigma = 0.2;
  double z0 = 1.0;
  double horizon = 1.0;
};

/// Mean absolute terminal error of `scheme` on GBM for dt = T 2^-l, l in levels.
/// Every level consumes the same fine Brownian path (finest level), summed.
inline StrongErrorReport strong_error(SolverScheme scheme, const GbmParams& p, const std::vector<int>& levels,
                                      std::size_t n_paths, std::uint64_t seed) {
  NoGradGuard no_grad;
  int finest = 0;
  for (int l : levels) finest = std::max(finest, l);
  const std::size_t fine_steps = std::size_t{1} << finest;
  std::vector<std::uint64_t> seeds(n_paths);
  for (std::size_t i = 0; i < n_paths; ++i) seeds[i] = derive_seed(seed, {i});
  const BrownianBatch bm(seeds, 1, p.horizon / static_cast<double>(fine_steps), fine_steps);

  // W(T) per path, accumulated from the finest increments.
  std::vector<double> w_T(n_paths, 0.0);
  for (std::size_t k = 0; k < fine_steps; ++k) {
    const Tensor dw = bm.increment(k);
    for (std::size_t i = 0; i < n_paths; ++i) w_T[i] += dw.values()[i];
  }

  const FunctionalSystem sys = gbm_system(p.mu, p.sigma);
  const Tensor z0 = Tensor::full(n_paths, 1, p.z0);
  StrongErrorReport rep;
  std::vector<double> log_dt, log_err;
  for (int l : levels) {
    SolveConfig cfg;
    cfg.scheme = scheme;
    cfg.n_steps = std::size_t{1} << l;
    cfg.horizon = p.horizon;
    cfg.record_states = false;
    cfg.explosion_threshold = 1e300;
    const Trajectory tr = solve_from(sys, z0, {}, bm, cfg);
    double err = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) {
      err += std::fabs(tr.terminal.values()[i] - gbm_exact(p.z0, p.mu, p.sigma, p.horizon, w_T[i]));
    }
    err /= static_cast<double>(n_paths);
    rep.dts.push_back(cfg.dt());
    rep.errors.push_back(err);
    log_dt.push_back(std::log(cfg.dt()));
    log_err.push_back(std::log(err));
  }
  rep.slope = fit_slope(log_dt, log_err);
  return rep;
}

}  // namespace nsde
