#pragma once

// Experiments: positivity / absorption, moment bounds, robustness in depth,
// diffusion-design comparison, missing-rate sweeps, drift-control ablation,
// solver timing and gradient checks.

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "nsde/dataset.hpp"
#include "nsde/gradcheck.hpp"
#include "nsde/oracles.hpp"
#include "nsde/training.hpp"
#include "nsde/wasserstein.hpp"

namespace nsde {

namespace detail {

inline std::vector<const ControlledPath*> pointers(const std::vector<ControlledPath>& paths) {
  std::vector<const ControlledPath*> out;
  for (const auto& p : paths) out.push_back(&p);
  return out;
}

inline std::vector<std::uint64_t> row_seeds(std::uint64_t root, std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = derive_seed(root, {i});
  return out;
}

inline std::vector<ControlledPath> random_paths(std::size_t count, std::size_t dx, std::size_t len, std::uint64_t seed,
                                                PathScheme scheme = PathScheme::natural_cubic) {
  std::vector<ControlledPath> out;
  for (std::size_t b = 0; b < count; ++b) {
    Rng rng(derive_seed(seed, {b}));
    IrregularSeries s;
    s.channels = dx;
    for (std::size_t k = 0; k < len; ++k) s.times.push_back(static_cast<double>(k) / static_cast<double>(len - 1));
    for (std::size_t i = 0; i < len * dx; ++i) s.values.push_back(rng.normal());
    s.mask.assign(len * dx, 1);
    out.push_back(build_path(s, scheme));
  }
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Positivity and absorption of the geometric model

struct PositivityConfig {
  std::size_t n_models = 20;
  std::size_t n_paths = 50;
  std::size_t n_steps = 100;
  double horizon = 1.0;
  std::size_t latent_dim = 8;
  std::size_t input_dim = 2;
  double sigma_bias = 1.0;
  std::uint64_t seed = 0;
};

struct PositivityReport {
  std::size_t n_models = 0, n_paths = 0;
  double min_state = std::numeric_limits<double>::infinity();
  bool positivity_ok = true;
  bool absorption_ok = true;
  bool zero_start_ok = true;
  std::vector<std::uint64_t> offending_seeds;
  // Control group: naive-sde from the same starts. Negative states are expected there.
  std::size_t naive_paths_negative = 0;
  double naive_min_state = std::numeric_limits<double>::infinity();

  bool pass() const { return positivity_ok && absorption_ok && zero_start_ok; }
};

inline nlohmann::json to_json(const PositivityReport& r) {
  return {{"n_models", r.n_models},           {"n_paths", r.n_paths},
          {"min_state", r.min_state},         {"positivity_ok", r.positivity_ok},
          {"absorption_ok", r.absorption_ok}, {"zero_start_ok", r.zero_start_ok},
          {"offending_seeds", r.offending_seeds},
          {"naive_control", {{"paths_with_negative_state", r.naive_paths_negative}, {"min_state", r.naive_min_state}}},
          {"pass", r.pass()}};
}

inline PositivityReport check_positivity_and_absorption(const PositivityConfig& cfg) {
  NoGradGuard no_grad;
  PositivityReport rep;
  rep.n_models = cfg.n_models;
  rep.n_paths = cfg.n_paths;
  SolveConfig scfg;
  scfg.n_steps = cfg.n_steps;
  scfg.horizon = cfg.horizon;
  scfg.record_states = true;
  scfg.throw_on_explosion = false;
  const std::size_t dz = cfg.latent_dim;
  for (std::size_t mi = 0; mi < cfg.n_models; ++mi) {
    const std::uint64_t mseed = derive_seed(cfg.seed, {mi});
    ModelConfig mc;
    mc.kind = ModelKind::gsde;
    mc.input_dim = cfg.input_dim;
    mc.latent_dim = dz;
    mc.sigma_bias = cfg.sigma_bias;
    mc.seed = mseed;
    const SdeModel model = make_model(mc);
    const auto paths = detail::random_paths(cfg.n_paths, cfg.input_dim, 8, derive_seed(mseed, {1}));
    const auto ptrs = detail::pointers(paths);
    const BrownianBatch bm(detail::row_seeds(derive_seed(mseed, {2}), cfg.n_paths), dz, scfg.dt(), scfg.n_steps);
    bool bad = false;

    // Positivity from the model's own (positive) start.
    const Tensor z0 = init_state(model, initial_observations(ptrs));
    const Trajectory tr = solve_from(model, z0, ptrs, bm, scfg);
    for (const auto& s : tr.states) {
      for (double v : s.values()) {
        rep.min_state = std::min(rep.min_state, v);
        if (!(v >= 0.0)) bad = true;
      }
    }
    if (bad) rep.positivity_ok = false;

    // Absorption: one zeroed component per row must stay exactly zero.
    std::vector<double> zv(z0.values().begin(), z0.values().end());
    for (std::size_t r = 0; r < cfg.n_paths; ++r) zv[r * dz + r % dz] = 0.0;
    const Trajectory ta = solve_from(model, Tensor::from(cfg.n_paths, dz, zv), ptrs, bm, scfg);
    for (const auto& s : ta.states) {
      for (std::size_t r = 0; r < cfg.n_paths; ++r) {
        if (s(r, r % dz) != 0.0) {
          rep.absorption_ok = false;
          bad = true;
        }
      }
      for (double v : s.values()) {
        if (!(v >= 0.0)) {
          rep.positivity_ok = false;
          bad = true;
        }
      }
    }

    // An all-zero start: zero fields and a zero trajectory.
    const Tensor zero = Tensor::zeros(cfg.n_paths, dz);
    const Trajectory tz = solve_from(model, zero, ptrs, bm, scfg);
    PathInputs x0;
    x0.value = eval_batch(ptrs, 0.0, 0);
    bool zero_ok = true;
    for (double v : model.drift(0.0, zero, x0).values()) zero_ok = zero_ok && v == 0.0;
    for (double v : model.diffusion(0.0, zero).values()) zero_ok = zero_ok && v == 0.0;
    for (const auto& s : tz.states) {
      for (double v : s.values()) zero_ok = zero_ok && v == 0.0;
    }
    if (!zero_ok) {
      rep.zero_start_ok = false;
      bad = true;
    }
    if (bad) rep.offending_seeds.push_back(mseed);

    // Control group: an unconstrained network diffusion from the same start.
    ModelConfig nc = mc;
    nc.kind = ModelKind::naive_sde;
    nc.diffusion = DiffusionForm::automatic;
    const SdeModel naive = make_model(nc);
    const Trajectory tn = solve_from(naive, z0, ptrs, bm, scfg);
    std::vector<std::uint8_t> negative(cfg.n_paths, 0);
    for (const auto& s : tn.states) {
      for (std::size_t r = 0; r < cfg.n_paths; ++r) {
        for (std::size_t j = 0; j < dz; ++j) {
          rep.naive_min_state = std::min(rep.naive_min_state, s(r, j));
          if (s(r, j) < 0.0) negative[r] = 1;
        }
      }
    }
    for (auto n : negative) rep.naive_paths_negative += n;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Second-moment bound for dz = -m z dt + sigma z dW

struct MomentConfig {
  double m = 1.0;
  double b = 0.0;
  double sigma = 0.5;
  std::size_t d = 2;
  std::vector<double> z0;  // empty = all ones
  double horizon = 5.0;
  std::size_t n_steps = 500;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 0;
};

struct MomentReport {
  double bound = 0.0;
  double sup_moment = 0.0;
  double se_at_sup = 0.0;
  double t_at_sup = 0.0;
  bool pass = false;
  std::vector<double> times, moments, ses;
};

inline nlohmann::json to_json(const MomentReport& r) {
  return {{"bound", r.bound},       {"sup_moment", r.sup_moment}, {"se_at_sup", r.se_at_sup},
          {"t_at_sup", r.t_at_sup}, {"pass", r.pass}};
}

/// (E|X(0)|^2 + b/m) exp(d sigma^2 / 2m).
inline double moment_bound(double m, double b, double sigma, std::size_t d, double initial_second_moment) {
  return (initial_second_moment + b / m) * std::exp(static_cast<double>(d) * sigma * sigma / (2.0 * m));
}

inline MomentReport check_moment_bound(const MomentConfig& cfg) {
  if (!(cfg.m > 0.0)) throw ValidationError("moment bound needs m > 0");
  if (cfg.b < 0.0) throw ValidationError("moment bound needs b >= 0");
  NoGradGuard no_grad;
  std::vector<double> z0 = cfg.z0.empty() ? std::vector<double>(cfg.d, 1.0) : cfg.z0;
  if (z0.size() != cfg.d) throw ShapeError("moment bound: z0 has the wrong dimension");
  double init = 0.0;
  for (double v : z0) init += v * v;
  MomentReport rep;
  rep.bound = moment_bound(cfg.m, cfg.b, cfg.sigma, cfg.d, init);

  std::vector<double> start(cfg.n_paths * cfg.d);
  for (std::size_t i = 0; i < cfg.n_paths; ++i) std::copy(z0.begin(), z0.end(), start.begin() + static_cast<long>(i * cfg.d));
  SolveConfig scfg;
  scfg.n_steps = cfg.n_steps;
  scfg.horizon = cfg.horizon;
  scfg.record_states = false;
  scfg.explosion_threshold = 1e300;
  const BrownianBatch bm(detail::row_seeds(cfg.seed, cfg.n_paths), cfg.d, scfg.dt(), cfg.n_steps);
  const double n = static_cast<double>(cfg.n_paths);
  auto observe = [&](std::size_t, double t, const Tensor& z) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < cfg.n_paths; ++i) {
      double q = 0.0;
      for (std::size_t j = 0; j < cfg.d; ++j) q += z(i, j) * z(i, j);
      s += q;
      s2 += q * q;
    }
    const double mean = s / n;
    const double var = std::max(0.0, s2 / n - mean * mean) * n / std::max(1.0, n - 1.0);
    rep.times.push_back(t);
    rep.moments.push_back(mean);
    rep.ses.push_back(std::sqrt(var / n));
  };
  solve_from(dissipative_system(cfg.m, cfg.sigma), Tensor::from(cfg.n_paths, cfg.d, start), {}, bm, scfg, observe);
  std::size_t arg = 0;
  for (std::size_t k = 1; k < rep.moments.size(); ++k) {
    if (rep.moments[k] > rep.moments[arg]) arg = k;
  }
  rep.sup_moment = rep.moments[arg];
  rep.se_at_sup = rep.ses[arg];
  rep.t_at_sup = rep.times[arg];
  rep.pass = rep.sup_moment <= rep.bound + 3.0 * rep.se_at_sup;
  return rep;
}

// ---------------------------------------------------------------------------
// Robustness of the readout distribution to input perturbation, as depth grows

struct RobustnessConfig {
  ModelConfig model;  // kind, dims, seed base
  double rho = 0.1;
  std::vector<double> depths{1.0, 2.0, 4.0, 8.0};
  std::size_t steps_per_unit = 50;
  std::size_t n_samples = 200;
  std::size_t n_projections = 50;
  PathScheme path_scheme = PathScheme::natural_cubic;
  // Put the model inside the hypotheses of the decay results before measuring:
  // a constant noise level with sigma^2 = 2 L_gamma + 2 r (lnsde) or 2 K_gamma + 2 r
  // (gsde); for lsde a decay term m = L_gamma + r makes the drift dissipative.
  bool enforce_hypotheses = true;
  double decay_rate = 4.0;  // r
  std::uint64_t seed = 0;
};

struct RobustnessPoint {
  double depth = 0.0;
  std::size_t n_steps = 0;
  double w1 = 0.0;
  double se = 0.0;
  bool valid = true;
  std::size_t exploded = 0;
};

struct RobustnessCurve {
  ModelKind kind = ModelKind::lnsde;
  double rho = 0.0;
  std::vector<RobustnessPoint> points;
  double spearman = 0.0;
  nlohmann::json constants;
};

inline nlohmann::json to_json(const RobustnessCurve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points) {
    pts.push_back({{"depth", p.depth}, {"n_steps", p.n_steps}, {"w1", p.w1}, {"se", p.se}, {"valid", p.valid},
                   {"exploded", p.exploded}});
  }
  return {{"kind", to_string(c.kind)}, {"rho", c.rho}, {"points", pts}, {"spearman", c.spearman},
          {"constants", c.constants}};
}

inline std::string robustness_csv(const RobustnessCurve& c) {
  std::string out = "T,W1,SE,valid\n";
  for (const auto& p : c.points) {
    out += detail::format_double(p.depth) + "," + detail::format_double(p.w1) + "," + detail::format_double(p.se) +
           "," + (p.valid ? "1" : "0") + "\n";
  }
  return out;
}

/// Sets sigma(t) to a constant level and, for lsde, a decay term, so that the
/// model satisfies the stated hypotheses. Returns the constants used.
inline nlohmann::json enforce_robustness_hypotheses(SdeModel& model, double rate) {
  const ModelKind kind = model.kind();
  const double L_gamma = lipschitz_upper_bound(model.gamma);
  nlohmann::json c = {{"L_gamma", L_gamma}, {"L_F", lipschitz_upper_bound(model.readout)},
                      {"L_h", lipschitz_upper_bound(model.h)}, {"decay_rate", rate}};
  if (model.sigma.layers.size() != 1) throw ValidationError("robustness: needs the affine sigma network");
  double level = 0.0;
  if (kind == ModelKind::lnsde) {
    level = std::sqrt(2.0 * L_gamma + 2.0 * rate);
  } else if (kind == ModelKind::gsde) {
    const double K_gamma = 1.0;  // tanh output bound, per component
    c["K_gamma"] = K_gamma;
    level = std::sqrt(2.0 * K_gamma + 2.0 * rate);
  } else if (kind == ModelKind::lsde) {
    model.config.drift_decay = L_gamma + rate;
    c["drift_decay"] = model.config.drift_decay;
    level = model.config.sigma_bias;
  } else {
    throw ValidationError("robustness hypotheses are stated for lsde, lnsde and gsde only");
  }
  for (double& w : model.sigma.layers[0].weight.mutable_values()) w = 0.0;
  for (double& b : model.sigma.layers[0].bias.mutable_values()) b = level;
  c["sigma_theta"] = level;
  return c;
}

/// x + rho * N(0, 1) on every observed cell.
inline Dataset perturb(const Dataset& ds, double rho, std::uint64_t seed) {
  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(seed, {i}));
    auto& s = out.samples[i];
    for (std::size_t j = 0; j < s.values.size(); ++j) {
      const double e = rng.normal();
      if (s.mask[j]) s.values[j] += rho * e;
    }
  }
  return out;
}

inline RobustnessCurve robustness_curve(const Dataset& ds, const RobustnessConfig& cfg, const SdeModel* trained = nullptr) {
  if (cfg.depths.size() < 2) throw ValidationError("robustness: need at least two depths");
  if (cfg.rho < 0.0) throw ValidationError("robustness: rho must be non-negative");
  NoGradGuard no_grad;
  SdeModel model = trained ? trained->clone() : make_model(cfg.model);
  RobustnessCurve curve;
  curve.kind = model.kind();
  curve.rho = cfg.rho;
  curve.constants = cfg.enforce_hypotheses ? enforce_robustness_hypotheses(model, cfg.decay_rate) : nlohmann::json::object();

  const std::size_t n = std::min(cfg.n_samples, ds.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const Dataset noisy = perturb(ds, cfg.rho, derive_seed(cfg.seed, {0x9e}));
  std::vector<ControlledPath> clean_paths, noisy_paths;
  for (auto i : idx) {
    clean_paths.push_back(build_path(ds.samples[i], cfg.path_scheme));
    noisy_paths.push_back(build_path(noisy.samples[i], cfg.path_scheme));
  }
  const auto cp = detail::pointers(clean_paths), np = detail::pointers(noisy_paths);
  const auto seeds = detail::row_seeds(derive_seed(cfg.seed, {0xb0}), n);
  const std::size_t out_dim = model.config.output_dim;

  std::vector<double> depth_valid, w_valid;
  for (double T : cfg.depths) {
    RobustnessPoint pt;
    pt.depth = T;
    pt.n_steps = static_cast<std::size_t>(std::llround(T * static_cast<double>(cfg.steps_per_unit)));
    if (pt.n_steps == 0) throw ValidationError("robustness: depth too small for the step density");
    SolveConfig scfg;
    scfg.horizon = T;
    scfg.n_steps = pt.n_steps;
    scfg.record_states = false;
    scfg.throw_on_explosion = false;
    const BrownianBatch bm(seeds, model.latent_dim(), scfg.dt(), pt.n_steps);
    const Trajectory a = solve(model, cp, bm, scfg);
    const Trajectory b = solve(model, np, bm, scfg);
    pt.exploded = a.exploded_count() + b.exploded_count();
    pt.valid = pt.exploded == 0;
    Tensor ya = readout(model, a.terminal), yb = readout(model, b.terminal);
    const auto est = w1_sliced(std::move(ya).values(), std::move(yb).values(), out_dim, cfg.n_projections,
                               derive_seed(cfg.seed, {0x51}));
    pt.w1 = est.value;
    pt.se = est.se;
    if (pt.valid) {
      depth_valid.push_back(T);
      w_valid.push_back(pt.w1);
    }
    curve.points.push_back(pt);
  }
  curve.spearman = depth_valid.size() >= 2 ? spearman(depth_valid, w_valid) : 0.0;
  return curve;
}

// ---------------------------------------------------------------------------
// Seeded train / test runs

/// Everything one classification (or regression) run needs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SolveConfig solve;
  PrepConfig prep;
  std::size_t task_param = 4;  // horizon (forecasting) or stride (interpolation)
  std::uint64_t seed = 0;
};

/// Seeds derived from one root, so a report's root seed reproduces the run.
struct RunSeeds {
  std::uint64_t split, missing, model, train;
  explicit RunSeeds(std::uint64_t root)
      : split(derive_seed(root, {1})), missing(derive_seed(root, {2})), model(derive_seed(root, {3})),
        train(derive_seed(root, {4})) {}
};

inline nlohmann::json to_json(const RunSeeds& s) {
  return {{"split", s.split}, {"missing", s.missing}, {"model", s.model}, {"train", s.train}};
}

struct RunResult {
  SdeModel model;
  TrainHistory history;
  Metrics val, test;
  Split split;
  Prepared prepared;
  bool aborted = false;
  std::string abort_reason;
};

/// Split, prepare (stats from the train split), build paths, train, evaluate.
/// A training abort is reported in the result rather than thrown.
inline RunResult run_experiment(const Dataset& raw, RunConfig cfg, const EpochHook& hook = {},
                                std::vector<std::size_t>* test_indices_out = nullptr) {
  const RunSeeds seeds(cfg.seed);
  cfg.train.split_seed = seeds.split;
  cfg.train.seed = seeds.train;
  cfg.prep.missing_seed = seeds.missing;
  cfg.model.seed = seeds.model;
  RunResult res;
  res.split = split(raw, cfg.train);
  res.prepared = prepare(raw, cfg.prep, res.split.train);
  const Dataset& ds = res.prepared.data;
  const auto scheme = cfg.train.path_scheme;
  const TaskData tr = task_data(ds, res.split.train, cfg.train.task, scheme, cfg.task_param);
  const TaskData va = task_data(ds, res.split.val, cfg.train.task, scheme, cfg.task_param);
  const TaskData te = task_data(ds, res.split.test, cfg.train.task, scheme, cfg.task_param);
  cfg.model.input_dim = ds.n_channels;
  cfg.model.output_dim = tr.output_dim();
  res.model = make_model(cfg.model);
  EpochHook inner;
  if (hook) inner = hook;
  try {
    res.history = train(res.model, tr, va, cfg.train, cfg.solve, inner);
  } catch (const TrainingAborted& e) {
    res.aborted = true;
    res.abort_reason = e.what();
  }
  const std::uint64_t es = evaluation_seed(cfg.train);
  res.val = evaluate(res.model, va, cfg.solve, cfg.train.eval_mc, es);
  res.test = evaluate(res.model, te, cfg.solve, cfg.train.eval_mc, derive_seed(es, {0x7e}));
  if (test_indices_out) *test_indices_out = res.split.test;
  return res;
}

// ---------------------------------------------------------------------------
// Diffusion-design comparison

struct VariantResult {
  std::string name;
  DiffusionForm form = DiffusionForm::linear;
  std::vector<double> train_loss, test_loss;
  bool aborted = false;
  std::string abort_reason;
  double final_test_loss = 0.0;
  bool finite = true;
  bool worst = false;
};

struct DiffusionComparison {
  std::vector<VariantResult> variants;

  const VariantResult& get(const std::string& name) const {
    for (const auto& v : variants) {
      if (v.name == name) return v;
    }
    throw ValidationError("no diffusion variant '" + name + "'");
  }
};

/// The six compared noise designs, wired onto one lnsde-style drift.
inline std::vector<std::pair<std::string, DiffusionForm>> diffusion_variants() {
  return {{"sqrt", DiffusionForm::sqrt_state},     {"cubic", DiffusionForm::cubic},
          {"constant", DiffusionForm::constant},   {"additive", DiffusionForm::additive},
          {"linear", DiffusionForm::linear},       {"network", DiffusionForm::network}};
}

inline nlohmann::json to_json(const DiffusionComparison& d) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : d.variants) {
    out.push_back({{"variant", v.name},
                   {"aborted", v.aborted},
                   {"abort_reason", v.abort_reason},
                   {"epochs", v.test_loss.size()},
                   {"final_test_loss", v.finite ? nlohmann::json(v.final_test_loss) : nlohmann::json(nullptr)},
                   {"finite", v.finite},
                   {"worst", v.worst}});
  }
  return out;
}

/// epoch,train_loss,test_loss plus a trailing marker line for aborted / worst variants.
inline std::string variant_csv(const VariantResult& v) {
  std::string out = "epoch,train_loss,test_loss\n";
  for (std::size_t e = 0; e < v.test_loss.size(); ++e) {
    out += std::to_string(e) + "," + detail::format_double(v.train_loss[e]) + "," + detail::format_double(v.test_loss[e]) + "\n";
  }
  if (v.aborted) out += "# aborted: " + v.abort_reason + "\n";
  if (v.worst) out += "# worst final test loss\n";
  return out;
}

/// Trains every variant for a fixed number of epochs without early stopping and
/// records the test loss after each epoch. Aborts are recorded per variant.
inline DiffusionComparison diffusion_comparison(const Dataset& raw, RunConfig cfg) {
  cfg.train.early_stopping = false;
  cfg.model.kind = ModelKind::lnsde;
  DiffusionComparison out;
  for (const auto& [name, form] : diffusion_variants()) {
    RunConfig rc = cfg;
    rc.model.diffusion = form;
    VariantResult v;
    v.name = name;
    v.form = form;
    // Test curve: evaluate the held-out split after each epoch.
    const RunSeeds seeds(rc.seed);
    TrainConfig tcfg = rc.train;
    tcfg.split_seed = seeds.split;
    const Split sp = split(raw, tcfg);
    PrepConfig pc = rc.prep;
    pc.missing_seed = seeds.missing;
    const Prepared prep = prepare(raw, pc, sp.train);
    const TaskData te = task_data(prep.data, sp.test, rc.train.task, rc.train.path_scheme, rc.task_param);
    const std::uint64_t es = derive_seed(seeds.train, {0x7e57});
    auto hook = [&](const SdeModel& m, const EpochRecord& rec) {
      v.train_loss.push_back(rec.train_loss);
      v.test_loss.push_back(evaluate(m, te, rc.solve, 1, es).loss);
    };
    const RunResult r = run_experiment(raw, rc, hook);
    v.aborted = r.aborted;
    v.abort_reason = r.abort_reason;
    v.final_test_loss = v.test_loss.empty() ? std::numeric_limits<double>::quiet_NaN() : v.test_loss.back();
    v.finite = !v.aborted && std::isfinite(v.final_test_loss);
    for (double x : v.train_loss) v.finite = v.finite && std::isfinite(x);
    out.variants.push_back(std::move(v));
  }
  // The worst variant: any abort, else the largest final test loss.
  std::size_t worst = 0;
  auto badness = [](const VariantResult& v) {
    return v.aborted || !v.finite ? std::numeric_limits<double>::infinity() : v.final_test_loss;
  };
  for (std::size_t i = 1; i < out.variants.size(); ++i) {
    if (badness(out.variants[i]) > badness(out.variants[worst])) worst = i;
  }
  out.variants[worst].worst = true;
  return out;
}

// ---------------------------------------------------------------------------
// Missing-rate sweep and the drift-control ablation

struct SweepCell {
  double rate = 0.0;
  std::uint64_t seed = 0;
  Metrics test;
  std::size_t epochs = 0;
  bool aborted = false;
};

struct SweepRow {
  double rate = 0.0;
  std::vector<double> accuracy;
  double mean = 0.0;
  double sd = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;

  const SweepRow& at(double rate) const {
    for (const auto& r : rows) {
      if (r.rate == rate) return r;
    }
    throw ValidationError("sweep has no rate " + std::to_string(rate));
  }
};

inline nlohmann::json to_json(const SweepResult& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back({{"rate", r.rate}, {"accuracy", r.accuracy}, {"mean", r.mean}, {"sd", r.sd}});
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : s.cells) {
    cells.push_back({{"rate", c.rate}, {"seed", c.seed}, {"epochs", c.epochs}, {"aborted", c.aborted}, {"test", to_json(c.test)}});
  }
  return {{"rows", rows}, {"cells", cells}};
}

/// Same hyperparameters at every rate; accuracy mean and sd over seeds.
inline SweepResult missing_rate_sweep(const Dataset& raw, const RunConfig& cfg, const std::vector<double>& rates,
                                      const std::vector<std::uint64_t>& seeds) {
  SweepResult out;
  for (double rate : rates) {
    SweepRow row;
    row.rate = rate;
    for (auto s : seeds) {
      RunConfig rc = cfg;
      rc.prep.missing_rate = rate;
      rc.seed = s;
      const RunResult r = run_experiment(raw, rc);
      out.cells.push_back({rate, s, r.test, r.history.epochs.size(), r.aborted});
      row.accuracy.push_back(r.test.accuracy);
    }
    row.mean = detail::mean_of(row.accuracy);
    row.sd = detail::sd_of(row.accuracy);
    out.rows.push_back(row);
  }
  return out;
}

struct AblationResult {
  SweepRow with_control, without_control;
  double gap() const { return with_control.mean - without_control.mean; }
};

/// The same run with and without the controlled-state input to the drift.
inline AblationResult control_ablation(const Dataset& raw, const RunConfig& cfg, double rate,
                                       const std::vector<std::uint64_t>& seeds) {
  RunConfig on = cfg, off = cfg;
  on.model.use_control = true;
  off.model.use_control = false;
  AblationResult r;
  r.with_control = missing_rate_sweep(raw, on, {rate}, seeds).rows.front();
  r.without_control = missing_rate_sweep(raw, off, {rate}, seeds).rows.front();
  return r;
}

// ---------------------------------------------------------------------------
// Solver timing

struct TimingResult {
  double euler_seconds = 0.0;     // median per epoch
  double milstein_seconds = 0.0;
  std::size_t epochs = 0;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-epoch wall clock of the same training workload under both schemes. The
/// schemes alternate epoch by epoch so that machine load affects both alike.
inline TimingResult solver_timing(const Dataset& raw, RunConfig cfg, std::size_t epochs) {
  cfg.train.max_epochs = 1;
  cfg.train.early_stopping = false;
  const RunSeeds seeds(cfg.seed);
  cfg.train.split_seed = seeds.split;
  cfg.train.seed = seeds.train;
  cfg.prep.missing_seed = seeds.missing;
  cfg.model.seed = seeds.model;
  const Split sp = split(raw, cfg.train);
  const Prepared prep = prepare(raw, cfg.prep, sp.train);
  const TaskData tr = task_data(prep.data, sp.train, cfg.train.task, cfg.train.path_scheme, cfg.task_param);
  const TaskData none;
  cfg.model.input_dim = prep.data.n_channels;
  cfg.model.output_dim = tr.output_dim();
  SdeModel me = make_model(cfg.model), mm = make_model(cfg.model);
  SolveConfig se = cfg.solve, sm = cfg.solve;
  se.scheme = SolverScheme::euler;
  sm.scheme = SolverScheme::milstein;
  std::vector<double> te, tm;
  for (std::size_t e = 0; e < epochs; ++e) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seeds.train, {e});
    te.push_back(train(me, tr, none, tc, se).epochs.front().seconds);
    tm.push_back(train(mm, tr, none, tc, sm).epochs.front().seconds);
  }
  return {median(te), median(tm), epochs};
}

// ---------------------------------------------------------------------------
// Gradient checks

struct GradcheckReport {
  std::map<std::string, double> errors;  // per check: max relative error
  double max_error = 0.0;
};

/// Backprop through a 2-step solve (d_z = 3) for every SDE kind, plus a plain
/// network, against central finite differences.
inline GradcheckReport gradcheck_suite(std::uint64_t seed) {
  GradcheckReport rep;
  for (auto kind : {ModelKind::lsde, ModelKind::lnsde, ModelKind::gsde, ModelKind::naive_sde}) {
    ModelConfig c;
    c.kind = kind;
    c.input_dim = 2;
    c.latent_dim = 3;
    c.time_dim = 4;
    c.n_layers = 1;
    c.n_hidden = 8;
    c.output_dim = 2;
    c.readout_hidden = 4;
    c.activation = Activation::tanh;
    c.sigma_bias = 0.3;
    c.seed = derive_seed(seed, {static_cast<std::uint64_t>(kind)});
    const SdeModel m = make_model(c);
    const auto paths = detail::random_paths(2, 2, 6, derive_seed(c.seed, {1}));
    const auto ptrs = detail::pointers(paths);
    const BrownianBatch bm(detail::row_seeds(derive_seed(c.seed, {2}), 2), 3, 0.5, 2);
    SolveConfig s;
    s.n_steps = 2;
    s.record_states = false;
    auto loss = [&] {
      const auto tr = solve(m, ptrs, bm, s);
      return softmax_cross_entropy(readout(m, tr.terminal), {0, 1}) + mean(square(tr.terminal));
    };
    rep.errors[to_string(kind)] = grad_check_parameters(loss, m.parameters(), 1e-5);
  }
  const Mlp net = mlp_init(4, {8}, 3, Activation::tanh, false, derive_seed(seed, {99}));
  Rng rng(derive_seed(seed, {100}));
  std::vector<double> xv(5 * 4);
  for (double& v : xv) v = rng.normal();
  const Tensor x = Tensor::from(5, 4, xv);
  rep.errors["network"] = grad_check_parameters([&] { return mean(square(forward(net, x))); }, net.parameters(), 1e-5);
  for (const auto& [k, v] : rep.errors) rep.max_error = std::max(rep.max_error, v);
  return rep;
}

}  // namespace nsde
