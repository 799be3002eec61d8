#pragma once

// Text checkpoints: version tag, config echo, normalization statistics and the
// flat parameter arrays in declaration order.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "nsde/dataset.hpp"
#include "nsde/model.hpp"

namespace nsde {

inline constexpr const char* kCheckpointFormat = "nsde-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_json(const ModelConfig& m) {
  return {{"kind", to_string(m.kind)},
          {"input_dim", m.input_dim},
          {"latent_dim", m.latent_dim},
          {"time_dim", m.time_dim},
          {"n_layers", m.n_layers},
          {"n_hidden", m.n_hidden},
          {"output_dim", m.output_dim},
          {"readout_hidden", m.readout_hidden},
          {"dropout", m.dropout},
          {"activation", to_string(m.activation)},
          {"sigma_net", to_string(m.sigma_net)},
          {"diffusion", to_string(m.diffusion)},
          {"use_control", m.use_control},
          {"sigma_bias", m.sigma_bias},
          {"constant_sigma", m.constant_sigma},
          {"drift_decay", m.drift_decay},
          {"seed", m.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.latent_dim = j.at("latent_dim").get<std::size_t>();
  m.time_dim = j.at("time_dim").get<std::size_t>();
  m.n_layers = j.at("n_layers").get<std::size_t>();
  m.n_hidden = j.at("n_hidden").get<std::size_t>();
  m.output_dim = j.at("output_dim").get<std::size_t>();
  m.readout_hidden = j.at("readout_hidden").get<std::size_t>();
  m.dropout = j.at("dropout").get<double>();
  m.activation = parse_activation(j.at("activation").get<std::string>());
  m.sigma_net = parse_sigma_net(j.at("sigma_net").get<std::string>());
  m.diffusion = parse_diffusion_form(j.at("diffusion").get<std::string>());
  m.use_control = j.at("use_control").get<bool>();
  m.sigma_bias = j.at("sigma_bias").get<double>();
  m.constant_sigma = j.at("constant_sigma").get<double>();
  m.drift_decay = j.at("drift_decay").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.constant = j.at("constant").get<std::vector<bool>>();
  return s;
}

struct Checkpoint {
  SdeModel model;
  nlohmann::json config;  // the run config that produced the model
  NormStats stats;
};

inline nlohmann::json checkpoint_json(const SdeModel& model, const nlohmann::json& config, const NormStats& stats) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : model.named_parameters()) {
    params.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"values", t.values()}});
  }
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"config", config},
          {"model", model_config_json(model.config)},
          {"normalization", to_json(stats)},
          {"parameters", params}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ValidationError("not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ValidationError("unsupported checkpoint version " + j.at("version").dump());
    }
    Checkpoint c;
    c.config = j.at("config");
    c.stats = norm_stats_from_json(j.at("normalization"));
    c.model = make_model(model_config_from_json(j.at("model")));
    const auto& params = j.at("parameters");
    auto named = c.model.named_parameters();
    if (params.size() != named.size()) throw ShapeError("checkpoint parameter count does not match the model");
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, t] = named[i];
      const auto& p = params[i];
      if (p.at("name").get<std::string>() != name) throw ShapeError("checkpoint parameter " + std::to_string(i) + " is not " + name);
      const auto shape = p.at("shape").get<std::vector<std::size_t>>();
      auto values = p.at("values").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols() || values.size() != t.size()) {
        throw ShapeError("checkpoint parameter " + name + " has the wrong shape");
      }
      t.mutable_values() = std::move(values);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const SdeModel& model, const nlohmann::json& config,
                            const NormStats& stats) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << checkpoint_json(model, config, stats).dump(1) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError(path.string() + " is not valid JSON");
  return checkpoint_from_json(j);
}

}  // namespace nsde
