#pragma once

// Resolved run configuration as JSON: defaults, strict merging, and the builders
// that turn one config into the per-experiment settings.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsde/lab.hpp"
#include "nsde/oracles.hpp"

namespace nsde {

struct DataConfig {
  std::string csv;  // empty = synthesize
  SynthKind synth = SynthKind::spirals;
  std::size_t n_samples = 300;
  std::size_t length = 40;
  double noise = 0.05;
  std::uint64_t seed = 123;
};

struct RobustnessSection {
  std::vector<std::string> kinds{"lsde", "lnsde", "gsde"};
  std::size_t n_seeds = 3;
  double rho = 0.1;
  std::vector<double> depths{1.0, 2.0, 4.0, 8.0};
  std::size_t steps_per_unit = 50;
  std::size_t n_samples = 200;
  std::size_t n_projections = 50;
  bool enforce_hypotheses = true;
  double decay_rate = 4.0;
  bool use_control = false;
  double sigma_bias = 0.5;
};

struct MomentCase {
  double m = 1.0, b = 0.0, sigma = 0.5;
  std::size_t d = 2;
};

struct StabilitySection {
  std::size_t n_models = 20;
  std::size_t n_paths = 50;
  std::size_t n_steps = 100;
  double horizon = 1.0;
  std::size_t latent_dim = 8;
  double sigma_bias = 1.0;
  std::vector<MomentCase> moment_cases{{1.0, 0.0, 0.1, 2}, {1.0, 0.0, 0.5, 2}, {2.0, 0.0, 0.5, 2}};
  std::size_t moment_paths = 10000;
  std::size_t moment_steps = 500;
  double moment_horizon = 5.0;
};

struct ConvergenceSection {
  std::vector<int> levels{4, 5, 6, 7, 8, 9};
  std::size_t n_paths = 2000;
  double mu = 0.05;
  double sigma = 0.2;
  double z0 = 1.0;
  double horizon = 1.0;
};

struct DiffusionSection {
  double missing_rate = 0.5;
  std::size_t epochs = 100;
  bool index_time = true;  // timestamps and horizon in units of observation index
};

struct SweepSection {
  std::vector<double> rates{0.0, 0.5, 0.7};
  std::size_t n_seeds = 3;
  double ablation_rate = 0.5;
  std::size_t timing_epochs = 5;
};

struct Config {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t threads = 1;
  DataConfig data;
  RunConfig run;
  RobustnessSection robustness;
  StabilitySection stability;
  ConvergenceSection convergence;
  DiffusionSection diffusion;
  SweepSection sweep;
};

inline nlohmann::json to_json(const Config& c) {
  using nlohmann::json;
  const auto& m = c.run.model;
  const auto& s = c.run.solve;
  const auto& t = c.run.train;
  const auto& p = c.run.prep;
  json cases = json::array();
  for (const auto& k : c.stability.moment_cases) cases.push_back({{"m", k.m}, {"b", k.b}, {"sigma", k.sigma}, {"d", k.d}});
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"threads", c.threads},
      {"data",
       {{"csv", c.data.csv},
        {"synth", to_string(c.data.synth)},
        {"n_samples", c.data.n_samples},
        {"length", c.data.length},
        {"noise", c.data.noise},
        {"seed", c.data.seed}}},
      {"model",
       {{"kind", to_string(m.kind)},
        {"latent_dim", m.latent_dim},
        {"time_dim", m.time_dim},
        {"n_layers", m.n_layers},
        {"n_hidden", m.n_hidden},
        {"readout_hidden", m.readout_hidden},
        {"dropout", m.dropout},
        {"activation", to_string(m.activation)},
        {"sigma_net", to_string(m.sigma_net)},
        {"diffusion", to_string(m.diffusion)},
        {"use_control", m.use_control},
        {"sigma_bias", m.sigma_bias},
        {"constant_sigma", m.constant_sigma},
        {"drift_decay", m.drift_decay}}},
      {"solve",
       {{"scheme", to_string(s.scheme)},
        {"n_steps", s.n_steps},
        {"horizon", s.horizon},
        {"explosion_threshold", s.explosion_threshold}}},
      {"train",
       {{"task", to_string(t.task)},
        {"max_epochs", t.max_epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"readout_lr_multiplier", t.readout_lr_multiplier},
        {"patience", t.patience},
        {"early_stopping", t.early_stopping},
        {"train_ratio", t.train_ratio},
        {"val_ratio", t.val_ratio},
        {"test_ratio", t.test_ratio},
        {"clip_norm", t.clip_norm},
        {"eval_mc", t.eval_mc},
        {"path_scheme", to_string(t.path_scheme)},
        {"explosion_patience", t.explosion_patience},
        {"task_param", c.run.task_param}}},
      {"prep",
       {{"missing_rate", p.missing_rate},
        {"scale", p.scale},
        {"target_len", p.target_len},
        {"normalize", p.normalize},
        {"time_scale", p.time_scale}}},
      {"robustness",
       {{"kinds", c.robustness.kinds},
        {"n_seeds", c.robustness.n_seeds},
        {"rho", c.robustness.rho},
        {"depths", c.robustness.depths},
        {"steps_per_unit", c.robustness.steps_per_unit},
        {"n_samples", c.robustness.n_samples},
        {"n_projections", c.robustness.n_projections},
        {"enforce_hypotheses", c.robustness.enforce_hypotheses},
        {"decay_rate", c.robustness.decay_rate},
        {"use_control", c.robustness.use_control},
        {"sigma_bias", c.robustness.sigma_bias}}},
      {"stability",
       {{"n_models", c.stability.n_models},
        {"n_paths", c.stability.n_paths},
        {"n_steps", c.stability.n_steps},
        {"horizon", c.stability.horizon},
        {"latent_dim", c.stability.latent_dim},
        {"sigma_bias", c.stability.sigma_bias},
        {"moment_cases", cases},
        {"moment_paths", c.stability.moment_paths},
        {"moment_steps", c.stability.moment_steps},
        {"moment_horizon", c.stability.moment_horizon}}},
      {"convergence",
       {{"levels", c.convergence.levels},
        {"n_paths", c.convergence.n_paths},
        {"mu", c.convergence.mu},
        {"sigma", c.convergence.sigma},
        {"z0", c.convergence.z0},
        {"horizon", c.convergence.horizon}}},
      {"diffusion",
       {{"missing_rate", c.diffusion.missing_rate},
        {"epochs", c.diffusion.epochs},
        {"index_time", c.diffusion.index_time}}},
      {"sweep",
       {{"rates", c.sweep.rates},
        {"n_seeds", c.sweep.n_seeds},
        {"ablation_rate", c.sweep.ablation_rate},
        {"timing_epochs", c.sweep.timing_epochs}}},
  };
}

namespace detail {

// Overlays `patch` on `base`; every key must already exist in `base`.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where,
                         std::vector<std::string>& unknown) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) {
      unknown.push_back(key);
      continue;
    }
    auto& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_strict(slot, it.value(), key, unknown);
    } else if (slot.is_object()) {
      throw ValidationError("config key '" + key + "' must be an object");
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T field(const nlohmann::json& j, const std::string& section, const std::string& key) {
  const auto& v = section.empty() ? j.at(key) : j.at(section).at(key);
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (v.is_number_float() || (v.is_number_integer() && v.get<long long>() < 0)) throw ValidationError("");
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ValidationError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ValidationError("config key '" + (section.empty() ? key : section + "." + key) + "' has the wrong type: " +
                          v.dump());
  }
}

}  // namespace detail

/// Defaults overlaid with `patch`. Unknown keys are an error that lists all of them.
inline Config config_from_json(const nlohmann::json& patch) {
  if (!patch.is_object()) throw ValidationError("config must be a JSON object");
  nlohmann::json j = to_json(Config{});
  std::vector<std::string> unknown;
  detail::merge_strict(j, patch, "", unknown);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ValidationError(msg);
  }
  using detail::field;
  using S = std::string;
  Config c;
  c.seed = field<std::uint64_t>(j, "", "seed");
  c.out = field<S>(j, "", "out");
  c.threads = field<std::size_t>(j, "", "threads");

  c.data.csv = field<S>(j, "data", "csv");
  c.data.synth = parse_synth_kind(field<S>(j, "data", "synth"));
  c.data.n_samples = field<std::size_t>(j, "data", "n_samples");
  c.data.length = field<std::size_t>(j, "data", "length");
  c.data.noise = field<double>(j, "data", "noise");
  c.data.seed = field<std::uint64_t>(j, "data", "seed");

  auto& m = c.run.model;
  m.kind = parse_model_kind(field<S>(j, "model", "kind"));
  m.latent_dim = field<std::size_t>(j, "model", "latent_dim");
  m.time_dim = field<std::size_t>(j, "model", "time_dim");
  m.n_layers = field<std::size_t>(j, "model", "n_layers");
  m.n_hidden = field<std::size_t>(j, "model", "n_hidden");
  m.readout_hidden = field<std::size_t>(j, "model", "readout_hidden");
  m.dropout = field<double>(j, "model", "dropout");
  m.activation = parse_activation(field<S>(j, "model", "activation"));
  m.sigma_net = parse_sigma_net(field<S>(j, "model", "sigma_net"));
  m.diffusion = parse_diffusion_form(field<S>(j, "model", "diffusion"));
  m.use_control = field<bool>(j, "model", "use_control");
  m.sigma_bias = field<double>(j, "model", "sigma_bias");
  m.constant_sigma = field<double>(j, "model", "constant_sigma");
  m.drift_decay = field<double>(j, "model", "drift_decay");

  auto& s = c.run.solve;
  s.scheme = parse_solver_scheme(field<S>(j, "solve", "scheme"));
  s.n_steps = field<std::size_t>(j, "solve", "n_steps");
  s.horizon = field<double>(j, "solve", "horizon");
  s.explosion_threshold = field<double>(j, "solve", "explosion_threshold");

  auto& t = c.run.train;
  t.task = parse_task(field<S>(j, "train", "task"));
  t.max_epochs = field<std::size_t>(j, "train", "max_epochs");
  t.batch_size = field<std::size_t>(j, "train", "batch_size");
  t.lr = field<double>(j, "train", "lr");
  t.readout_lr_multiplier = field<double>(j, "train", "readout_lr_multiplier");
  t.patience = field<std::size_t>(j, "train", "patience");
  t.early_stopping = field<bool>(j, "train", "early_stopping");
  t.train_ratio = field<double>(j, "train", "train_ratio");
  t.val_ratio = field<double>(j, "train", "val_ratio");
  t.test_ratio = field<double>(j, "train", "test_ratio");
  t.clip_norm = field<double>(j, "train", "clip_norm");
  t.eval_mc = field<std::size_t>(j, "train", "eval_mc");
  t.path_scheme = parse_path_scheme(field<S>(j, "train", "path_scheme"));
  t.explosion_patience = field<std::size_t>(j, "train", "explosion_patience");
  c.run.task_param = field<std::size_t>(j, "train", "task_param");

  auto& p = c.run.prep;
  p.missing_rate = field<double>(j, "prep", "missing_rate");
  p.scale = field<bool>(j, "prep", "scale");
  p.target_len = field<std::size_t>(j, "prep", "target_len");
  p.normalize = field<bool>(j, "prep", "normalize");
  p.time_scale = field<double>(j, "prep", "time_scale");

  auto& r = c.robustness;
  r.kinds = field<std::vector<S>>(j, "robustness", "kinds");
  r.n_seeds = field<std::size_t>(j, "robustness", "n_seeds");
  r.rho = field<double>(j, "robustness", "rho");
  r.depths = field<std::vector<double>>(j, "robustness", "depths");
  r.steps_per_unit = field<std::size_t>(j, "robustness", "steps_per_unit");
  r.n_samples = field<std::size_t>(j, "robustness", "n_samples");
  r.n_projections = field<std::size_t>(j, "robustness", "n_projections");
  r.enforce_hypotheses = field<bool>(j, "robustness", "enforce_hypotheses");
  r.decay_rate = field<double>(j, "robustness", "decay_rate");
  r.use_control = field<bool>(j, "robustness", "use_control");
  r.sigma_bias = field<double>(j, "robustness", "sigma_bias");
  for (const auto& k : r.kinds) parse_model_kind(k);

  auto& st = c.stability;
  st.n_models = field<std::size_t>(j, "stability", "n_models");
  st.n_paths = field<std::size_t>(j, "stability", "n_paths");
  st.n_steps = field<std::size_t>(j, "stability", "n_steps");
  st.horizon = field<double>(j, "stability", "horizon");
  st.latent_dim = field<std::size_t>(j, "stability", "latent_dim");
  st.sigma_bias = field<double>(j, "stability", "sigma_bias");
  st.moment_cases.clear();
  for (const auto& k : j.at("stability").at("moment_cases")) {
    std::vector<std::string> bad;
    nlohmann::json one = {{"m", 1.0}, {"b", 0.0}, {"sigma", 0.5}, {"d", 2}};
    detail::merge_strict(one, k, "stability.moment_cases[]", bad);
    if (!bad.empty()) throw ValidationError("unknown config keys: " + bad.front());
    st.moment_cases.push_back({field<double>(one, "", "m"), field<double>(one, "", "b"), field<double>(one, "", "sigma"),
                               field<std::size_t>(one, "", "d")});
  }
  st.moment_paths = field<std::size_t>(j, "stability", "moment_paths");
  st.moment_steps = field<std::size_t>(j, "stability", "moment_steps");
  st.moment_horizon = field<double>(j, "stability", "moment_horizon");

  auto& cv = c.convergence;
  cv.levels = field<std::vector<int>>(j, "convergence", "levels");
  cv.n_paths = field<std::size_t>(j, "convergence", "n_paths");
  cv.mu = field<double>(j, "convergence", "mu");
  cv.sigma = field<double>(j, "convergence", "sigma");
  cv.z0 = field<double>(j, "convergence", "z0");
  cv.horizon = field<double>(j, "convergence", "horizon");

  c.diffusion.missing_rate = field<double>(j, "diffusion", "missing_rate");
  c.diffusion.epochs = field<std::size_t>(j, "diffusion", "epochs");
  c.diffusion.index_time = field<bool>(j, "diffusion", "index_time");

  c.sweep.rates = field<std::vector<double>>(j, "sweep", "rates");
  c.sweep.n_seeds = field<std::size_t>(j, "sweep", "n_seeds");
  c.sweep.ablation_rate = field<double>(j, "sweep", "ablation_rate");
  c.sweep.timing_epochs = field<std::size_t>(j, "sweep", "timing_epochs");

  c.run.seed = c.seed;
  c.run.train.check();
  if (c.run.solve.n_steps == 0) throw ValidationError("solve.n_steps must be >= 1");
  if (!(c.run.solve.horizon > 0.0)) throw ValidationError("solve.horizon must be positive");
  if (c.threads == 0) throw ValidationError("threads must be >= 1");
  return c;
}

/// `section.key=value` on top of a config; the value is parsed as JSON when it
/// parses, else taken as a string.
inline void apply_override(nlohmann::json& patch, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &patch;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override has an empty key segment: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Builders shared by the command-line tool and the acceptance run

inline Dataset load_data(const DataConfig& d) {
  if (!d.csv.empty()) return load_csv(d.csv);
  return synth(d.synth, d.n_samples, d.length, d.noise, d.seed);
}

inline std::vector<std::uint64_t> seed_list(std::uint64_t root, std::size_t n) {
  std::vector<std::uint64_t> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = root + k;
  return out;
}

inline RobustnessConfig robustness_config(const Config& c, ModelKind kind, std::uint64_t seed, std::size_t input_dim,
                                          std::size_t output_dim) {
  RobustnessConfig rc;
  rc.model = c.run.model;
  rc.model.kind = kind;
  rc.model.diffusion = DiffusionForm::automatic;
  rc.model.input_dim = input_dim;
  rc.model.output_dim = output_dim;
  rc.model.use_control = c.robustness.use_control;
  rc.model.sigma_bias = c.robustness.sigma_bias;
  rc.model.seed = RunSeeds(seed).model;
  if (c.robustness.enforce_hypotheses) rc.model.sigma_net = SigmaNet::affine;
  rc.rho = c.robustness.rho;
  rc.depths = c.robustness.depths;
  rc.steps_per_unit = c.robustness.steps_per_unit;
  rc.n_samples = c.robustness.n_samples;
  rc.n_projections = c.robustness.n_projections;
  rc.path_scheme = c.run.train.path_scheme;
  rc.enforce_hypotheses = c.robustness.enforce_hypotheses;
  rc.decay_rate = c.robustness.decay_rate;
  rc.seed = seed;
  return rc;
}

inline PositivityConfig positivity_config(const Config& c) {
  PositivityConfig pc;
  pc.n_models = c.stability.n_models;
  pc.n_paths = c.stability.n_paths;
  pc.n_steps = c.stability.n_steps;
  pc.horizon = c.stability.horizon;
  pc.latent_dim = c.stability.latent_dim;
  pc.sigma_bias = c.stability.sigma_bias;
  pc.seed = c.seed;
  return pc;
}

inline std::vector<MomentConfig> moment_configs(const Config& c) {
  std::vector<MomentConfig> out;
  for (std::size_t i = 0; i < c.stability.moment_cases.size(); ++i) {
    const auto& k = c.stability.moment_cases[i];
    MomentConfig mc;
    mc.m = k.m;
    mc.b = k.b;
    mc.sigma = k.sigma;
    mc.d = k.d;
    mc.horizon = c.stability.moment_horizon;
    mc.n_steps = c.stability.moment_steps;
    mc.n_paths = c.stability.moment_paths;
    mc.seed = derive_seed(c.seed, {0x30, i});
    out.push_back(mc);
  }
  return out;
}

/// The run used by the diffusion comparison: fixed epochs, the configured missing
/// rate and, with index_time, one solver step per observation index.
inline RunConfig diffusion_run_config(const Config& c, const Dataset& ds) {
  RunConfig rc = c.run;
  rc.train.max_epochs = c.diffusion.epochs;
  rc.train.early_stopping = false;
  rc.prep.missing_rate = c.diffusion.missing_rate;
  if (c.diffusion.index_time) {
    std::size_t len = 0;
    for (const auto& s : ds.samples) len = std::max(len, s.length());
    if (rc.prep.scale && rc.prep.target_len > 0) len = rc.prep.target_len;
    if (len < 2) throw ValidationError("diffusion comparison needs series of length >= 2");
    const double span = static_cast<double>(len - 1);
    rc.prep.time_scale = span;
    rc.solve.horizon = span;
    rc.solve.n_steps = len - 1;
  }
  return rc;
}

inline GbmParams convergence_params(const Config& c) {
  GbmParams p;
  p.mu = c.convergence.mu;
  p.sigma = c.convergence.sigma;
  p.z0 = c.convergence.z0;
  p.horizon = c.convergence.horizon;
  return p;
}

}  // namespace nsde
