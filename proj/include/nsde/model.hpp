#pragma once

// Drift / diffusion assembly for every model kind.
//
//   naive-sde  dz = f(t,z) dt + g(t,z) dW                      (both free networks)
//   lsde       dz = gamma(zbar) dt + sigma(t) dW
//   lnsde      dz = gamma(t, zbar) dt + sigma(t) z dW
//   gsde       dz / z = gamma(t, zbar) dt + sigma(t) dW
//   node       lnsde drift, no diffusion
//   ncde       dz = f(t,z) dX(t)
//
// with zbar = zeta(t, z, X(t)) the controlled latent state. All noise is diagonal.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nsde/adam.hpp"
#include "nsde/errors.hpp"
#include "nsde/mlp.hpp"
#include "nsde/rng.hpp"
#include "nsde/tensor.hpp"

namespace nsde {

enum class ModelKind { naive_sde, lsde, lnsde, gsde, ncde, node };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::naive_sde: return "naive-sde";
    case ModelKind::lsde: return "lsde";
    case ModelKind::lnsde: return "lnsde";
    case ModelKind::gsde: return "gsde";
    case ModelKind::ncde: return "ncde";
    case ModelKind::node: return "node";
  }
  return "lnsde";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "naive-sde") return ModelKind::naive_sde;
  if (s == "lsde") return ModelKind::lsde;
  if (s == "lnsde") return ModelKind::lnsde;
  if (s == "gsde") return ModelKind::gsde;
  if (s == "ncde") return ModelKind::ncde;
  if (s == "node") return ModelKind::node;
  throw ValidationError("unknown model kind '" + s + "'");
}

/// Shape of the diffusion coefficient g(t, z), applied element-wise.
enum class DiffusionForm {
  automatic,   // the kind's own form
  additive,    // sigma(t)
  linear,      // sigma(t) * z
  sqrt_state,  // sqrt(relu(z) + 1e-8)
  cubic,       // |z|^3
  constant,    // learnable sigma_theta
  network,     // g(t, z)
  none,
};

inline std::string to_string(DiffusionForm f) {
  switch (f) {
    case DiffusionForm::automatic: return "automatic";
    case DiffusionForm::additive: return "additive";
    case DiffusionForm::linear: return "linear";
    case DiffusionForm::sqrt_state: return "sqrt";
    case DiffusionForm::cubic: return "cubic";
    case DiffusionForm::constant: return "constant";
    case DiffusionForm::network: return "network";
    case DiffusionForm::none: return "none";
  }
  return "automatic";
}

inline DiffusionForm parse_diffusion_form(const std::string& s) {
  for (auto f : {DiffusionForm::automatic, DiffusionForm::additive, DiffusionForm::linear,
                 DiffusionForm::sqrt_state, DiffusionForm::cubic, DiffusionForm::constant,
                 DiffusionForm::network, DiffusionForm::none}) {
    if (to_string(f) == s) return f;
  }
  throw ValidationError("unknown diffusion form '" + s + "'");
}

inline DiffusionForm default_diffusion(ModelKind k) {
  switch (k) {
    case ModelKind::naive_sde: return DiffusionForm::network;
    case ModelKind::lsde: return DiffusionForm::additive;
    case ModelKind::lnsde:
    case ModelKind::gsde: return DiffusionForm::linear;
    case ModelKind::ncde:
    case ModelKind::node: return DiffusionForm::none;
  }
  return DiffusionForm::none;
}

/// How sigma(t) is parameterised: affine in the time encoding, or a final-tanh MLP.
enum class SigmaNet { affine, mlp };

inline std::string to_string(SigmaNet s) { return s == SigmaNet::affine ? "affine" : "mlp"; }
inline SigmaNet parse_sigma_net(const std::string& s) {
  if (s == "affine") return SigmaNet::affine;
  if (s == "mlp") return SigmaNet::mlp;
  throw ValidationError("unknown sigma net '" + s + "'");
}

// ---------------------------------------------------------------------------
// Time encoding

/// Component 2i = sin(t / 10000^(2i/d)), 2i+1 = cos(t / 10000^(2i/d)).
inline std::vector<double> time_encoding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ValidationError("time encoding dimension must be even and positive");
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

inline Tensor time_encoding_row(double t, std::size_t dim) { return Tensor::row(time_encoding(t, dim)); }

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  ModelKind kind = ModelKind::lnsde;
  std::size_t input_dim = 1;   // d_x
  std::size_t latent_dim = 16; // d_z
  std::size_t time_dim = 8;    // d_t
  std::size_t n_layers = 2;    // hidden layers per vector field
  std::size_t n_hidden = 32;
  std::size_t output_dim = 2;
  std::size_t readout_hidden = 32;  // 0 = single affine readout
  double dropout = 0.1;
  Activation activation = Activation::relu;
  SigmaNet sigma_net = SigmaNet::mlp;
  DiffusionForm diffusion = DiffusionForm::automatic;
  bool use_control = true;
  double sigma_bias = 0.0;      // initial bias of sigma's last layer
  double constant_sigma = 0.5;  // initial sigma_theta for the constant form
  double drift_decay = 0.0;     // m in an extra -m z drift term (lsde / lnsde / naive-sde)
  std::uint64_t seed = 0;

  DiffusionForm resolved_diffusion() const {
    return diffusion == DiffusionForm::automatic ? default_diffusion(kind) : diffusion;
  }
  /// ncde / naive-sde never see zeta.
  bool has_control() const {
    return use_control && kind != ModelKind::ncde && kind != ModelKind::naive_sde;
  }
};

/// Path inputs at one solver time: X(t) and dX/dt, each [B, d_x + 1]. May be
/// undefined for systems that ignore the path.
struct PathInputs {
  Tensor value;
  Tensor deriv;
};

struct SdeModel {
  ModelConfig config;
  Mlp h;        // d_x -> d_z, affine
  Mlp zeta;     // (d_t + d_z + d_x + 1) -> d_z, final tanh
  Mlp gamma;    // drift network (ncde: d_z * (d_x + 1) outputs)
  Mlp sigma;    // sigma(t) or g(t, z)
  Tensor sigma_const;  // [1, d_z], constant form only
  Mlp readout;  // F

  ModelKind kind() const { return config.kind; }
  std::size_t latent_dim() const { return config.latent_dim; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto add = [&](const std::string& prefix, const Mlp& m) {
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        out.emplace_back(prefix + "." + std::to_string(l) + ".weight", m.layers[l].weight);
        out.emplace_back(prefix + "." + std::to_string(l) + ".bias", m.layers[l].bias);
      }
    };
    add("h", h);
    add("zeta", zeta);
    add("gamma", gamma);
    add("sigma", sigma);
    if (sigma_const.defined()) out.emplace_back("sigma_const", sigma_const);
    add("readout", readout);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  SdeModel clone() const {
    SdeModel m = *this;
    m.h = h.clone();
    m.zeta = zeta.clone();
    m.gamma = gamma.clone();
    m.sigma = sigma.clone();
    if (sigma_const.defined()) m.sigma_const = sigma_const.clone();
    m.readout = readout.clone();
    return m;
  }

  // -- pieces used by the solver ------------------------------------------

  Tensor encode(double t) const { return time_encoding_row(t, config.time_dim); }

  Tensor controlled_state(double t, const Tensor& z, const Tensor& x) const {
    return forward(zeta, concat_cols({encode(t), z, x}));
  }

  Tensor latent_input(double t, const Tensor& z, const PathInputs& path) const {
    if (!config.has_control()) return z;
    if (!path.value.defined()) throw ShapeError("model with control needs path values");
    return controlled_state(t, z, path.value);
  }

  /// gamma(t, zbar) for lnsde / gsde / node; gamma(zbar) for lsde; f(t,z) for naive.
  Tensor drift_network(double t, const Tensor& z, const PathInputs& path) const {
    const Tensor zbar = latent_input(t, z, path);
    if (config.kind == ModelKind::lsde) return forward(gamma, zbar);
    return forward(gamma, concat_cols({encode(t), zbar}));
  }

  Tensor drift(double t, const Tensor& z, const PathInputs& path) const {
    switch (config.kind) {
      case ModelKind::gsde: {
        for (double v : z.values()) {
          if (v < 0.0) throw NegativeStateGSDE("gsde drift evaluated at a negative state");
        }
        return growth_rate(t, z, path) * z;
      }
      case ModelKind::ncde: {
        if (!path.deriv.defined()) throw ShapeError("ncde drift needs path derivatives");
        const Tensor f = forward(gamma, concat_cols({encode(t), z}));
        return batched_matvec(f, path.deriv, config.latent_dim);
      }
      default: {
        const Tensor f = drift_network(t, z, path);
        return config.drift_decay == 0.0 ? f : f - z * config.drift_decay;
      }
    }
  }

  /// Relative drift gamma(t, zbar) of the geometric model.
  Tensor growth_rate(double t, const Tensor& z, const PathInputs& path) const {
    return drift_network(t, z, path);
  }

  /// sigma(t) as a [1, d_z] row.
  Tensor noise_scale(double t) const {
    if (sigma_const.defined() && config.resolved_diffusion() == DiffusionForm::constant) return sigma_const;
    return forward(sigma, encode(t));
  }

  Tensor diffusion(double t, const Tensor& z) const {
    const std::size_t rows = z.rows();
    switch (config.resolved_diffusion()) {
      case DiffusionForm::additive: return broadcast_rows(noise_scale(t), rows);
      case DiffusionForm::linear: return noise_scale(t) * z;
      case DiffusionForm::sqrt_state: return nsde::sqrt(relu(z) + 1e-8);
      case DiffusionForm::cubic: return abs_cube(z);
      case DiffusionForm::constant: return broadcast_rows(sigma_const, rows);
      case DiffusionForm::network: return forward(sigma, concat_cols({encode(t), z}));
      default: return Tensor::zeros(rows, z.cols());
    }
  }

  /// Diagonal of d diffusion / dz for the Milstein correction; nullopt when no
  /// closed form exists (network diffusion).
  std::optional<Tensor> diffusion_slope(double t, const Tensor& z) const {
    const std::size_t rows = z.rows();
    switch (config.resolved_diffusion()) {
      case DiffusionForm::additive:
      case DiffusionForm::constant:
      case DiffusionForm::none: return Tensor::zeros(rows, z.cols());
      case DiffusionForm::linear: return broadcast_rows(noise_scale(t), rows);
      case DiffusionForm::sqrt_state: {
        std::vector<std::uint8_t> positive(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) positive[i] = z.values()[i] > 0.0;
        const Tensor d = (nsde::sqrt(relu(z) + 1e-8) * 2.0);
        return where(positive, Tensor::full(rows, z.cols(), 1.0) / d, Tensor::zeros(rows, z.cols()));
      }
      case DiffusionForm::cubic: {
        std::vector<double> s(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) s[i] = z.values()[i] >= 0.0 ? 3.0 : -3.0;
        return square(z) * Tensor::from(rows, z.cols(), std::move(s));
      }
      default: return std::nullopt;
    }
  }

  bool additive_noise() const {
    const auto f = config.resolved_diffusion();
    return f == DiffusionForm::additive || f == DiffusionForm::constant || f == DiffusionForm::none;
  }
};

/// Builds every network for the configured kind, deterministically from config.seed.
inline SdeModel make_model(const ModelConfig& cfg) {
  if (cfg.latent_dim == 0 || cfg.input_dim == 0 || cfg.output_dim == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (!(cfg.drift_decay >= 0.0)) throw ValidationError("drift_decay must be non-negative");
  const DiffusionForm form = cfg.resolved_diffusion();
  if (cfg.kind == ModelKind::gsde && form != DiffusionForm::linear) {
    throw ValidationError("gsde requires the linear (sigma(t) z) diffusion form");
  }
  if ((cfg.kind == ModelKind::node || cfg.kind == ModelKind::ncde) && form != DiffusionForm::none) {
    throw ValidationError(to_string(cfg.kind) + " has no diffusion");
  }
  SdeModel m;
  m.config = cfg;
  const std::size_t dz = cfg.latent_dim, dt = cfg.time_dim, dx = cfg.input_dim;
  const std::vector<std::size_t> hidden(cfg.n_layers, cfg.n_hidden);
  auto seed = [&](std::uint64_t k) { return derive_seed(cfg.seed, {k}); };

  m.h = mlp_init(dx, {}, dz, Activation::identity, false, seed(1));
  if (cfg.has_control()) {
    m.zeta = mlp_init(dt + dz + dx + 1, hidden, dz, cfg.activation, true, seed(2));
  }
  // The geometric model needs a bounded drift: tanh throughout.
  const Activation drift_act = cfg.kind == ModelKind::gsde ? Activation::tanh : cfg.activation;
  switch (cfg.kind) {
    case ModelKind::lsde: m.gamma = mlp_init(dz, hidden, dz, drift_act, true, seed(3)); break;
    case ModelKind::ncde: m.gamma = mlp_init(dt + dz, hidden, dz * (dx + 1), drift_act, true, seed(3)); break;
    default: m.gamma = mlp_init(dt + dz, hidden, dz, drift_act, true, seed(3)); break;
  }
  switch (form) {
    case DiffusionForm::additive:
    case DiffusionForm::linear:
      if (cfg.sigma_net == SigmaNet::affine) {
        m.sigma = mlp_init(dt, {}, dz, Activation::identity, false, seed(4));
      } else {
        m.sigma = mlp_init(dt, hidden, dz, cfg.activation, true, seed(4));
      }
      for (double& b : m.sigma.layers.back().bias.mutable_values()) b = cfg.sigma_bias;
      break;
    case DiffusionForm::network:
      m.sigma = mlp_init(dt + dz, hidden, dz, cfg.activation, true, seed(4));
      break;
    case DiffusionForm::constant:
      m.sigma_const = Tensor::parameter(1, dz, std::vector<double>(dz, cfg.constant_sigma));
      break;
    default: break;
  }
  std::vector<std::size_t> readout_hidden;
  if (cfg.readout_hidden > 0) readout_hidden.push_back(cfg.readout_hidden);
  m.readout = mlp_init(dz, readout_hidden, cfg.output_dim, Activation::relu, false, seed(5), cfg.dropout);
  return m;
}

// ---------------------------------------------------------------------------
// Operations on a model

/// z0 = W_h x0 + b_h; for gsde softplus(.) + 1e-6 keeps the start strictly positive.
inline Tensor init_state(const SdeModel& model, const Tensor& x0) {
  if (x0.cols() != model.config.input_dim) {
    throw ShapeError("init_state: x0 has " + std::to_string(x0.cols()) + " columns, expected " +
                     std::to_string(model.config.input_dim));
  }
  Tensor z0 = forward(model.h, x0);
  if (model.kind() == ModelKind::gsde) z0 = softplus(z0) + 1e-6;
  return z0;
}

inline Tensor controlled_state(const SdeModel& model, double t, const Tensor& z, const Tensor& x) {
  return model.controlled_state(t, z, x);
}

inline Tensor drift(const SdeModel& model, double t, const Tensor& z, const PathInputs& path) {
  return model.drift(t, z, path);
}

inline Tensor diffusion(const SdeModel& model, double t, const Tensor& z) { return model.diffusion(t, z); }

inline Tensor readout(const SdeModel& model, const Tensor& z_terminal, Mode mode = Mode::eval,
                      std::uint64_t dropout_seed = 0) {
  return forward(model.readout, z_terminal, mode, dropout_seed);
}

/// Learning-rate groups: everything at the base rate except the readout's last layer.
inline std::vector<ParamGroup> parameter_groups(const SdeModel& model, double readout_multiplier) {
  ParamGroup base{"base", {}, 1.0};
  ParamGroup head{"readout_final", {}, readout_multiplier};
  const Layer& last = model.readout.layers.back();
  for (const auto& p : model.parameters()) {
    if (p.id() == last.weight.id() || p.id() == last.bias.id()) {
      head.params.push_back(p);
    } else {
      base.params.push_back(p);
    }
  }
  return {base, head};
}

}  // namespace nsde
