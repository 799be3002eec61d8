#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "nsde/errors.hpp"
#include "nsde/path.hpp"
#include "nsde/rng.hpp"

namespace nsde {

struct Dataset {
  std::string name;
  std::size_t n_channels = 0;
  std::size_t n_classes = 0;  // 0 for regression
  std::vector<IrregularSeries> samples;
  std::vector<std::string> ids;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return samples.size(); }
  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& s : samples) out.push_back(s.label.value_or(-1));
    return out;
  }
};

inline void validate(const Dataset& ds) {
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.channels != ds.n_channels) throw ValidationError("sample " + std::to_string(i) + " has a different channel count");
    validate(s);
    if (s.label && ds.n_classes > 0 && (*s.label < 0 || static_cast<std::size_t>(*s.label) >= ds.n_classes)) {
      throw ValidationError("sample " + std::to_string(i) + " label out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ValidationError(where + ": cannot parse number '" + s + "'");
  }
  return v;
}

inline long parse_int(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw ValidationError(where + ": cannot parse integer '" + s + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// `<stem>_labels.csv` next to `<stem>.csv`.
inline std::filesystem::path labels_path_for(const std::filesystem::path& csv) {
  return csv.parent_path() / (csv.stem().string() + "_labels.csv");
}

/// Long format `sample_id,time,channel,value`; an empty value marks a missing cell.
/// Channels are integer indices 0..d-1. Labels come from the sibling labels file
/// when it exists.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header != std::vector<std::string>{"sample_id", "time", "channel", "value"}) {
    throw ValidationError(path.string() + ":1: expected header sample_id,time,channel,value");
  }

  struct Cell {
    double time;
    std::size_t channel;
    std::optional<double> value;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Cell>> cells;
  std::map<std::tuple<std::string, double, std::size_t>, std::size_t> seen;
  std::size_t n_channels = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw ValidationError(where + ": expected 4 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) throw ValidationError(where + ": empty sample_id");
    const double t = detail::parse_double(f[1], where);
    const long c = detail::parse_int(f[2], where);
    if (c < 0) throw ValidationError(where + ": negative channel index");
    std::optional<double> v;
    if (!f[3].empty()) v = detail::parse_double(f[3], where);
    const auto key = std::make_tuple(f[0], t, static_cast<std::size_t>(c));
    if (auto it = seen.find(key); it != seen.end()) {
      throw ValidationError(where + ": duplicate (sample, time, channel), first seen on line " + std::to_string(it->second));
    }
    seen[key] = lineno;
    if (!cells.count(f[0])) order.push_back(f[0]);
    cells[f[0]].push_back({t, static_cast<std::size_t>(c), v});
    n_channels = std::max(n_channels, static_cast<std::size_t>(c) + 1);
  }

  Dataset ds;
  ds.name = path.stem().string();
  ds.n_channels = n_channels;
  ds.provenance = {{"source", path.string()}};
  for (const auto& id : order) {
    auto& list = cells[id];
    std::vector<double> times;
    for (const auto& cell : list) times.push_back(cell.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    IrregularSeries s;
    s.times = times;
    s.channels = n_channels;
    s.values.assign(times.size() * n_channels, 0.0);
    s.mask.assign(times.size() * n_channels, 0);
    for (const auto& cell : list) {
      const std::size_t k = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), cell.time) - times.begin());
      if (cell.value) {
        s.values[k * n_channels + cell.channel] = *cell.value;
        s.mask[k * n_channels + cell.channel] = 1;
      }
    }
    if (s.length() < 2) throw TooFewKnots("sample '" + id + "' has fewer than 2 time points");
    validate(s);
    ds.samples.push_back(std::move(s));
    ds.ids.push_back(id);
  }

  const auto lpath = labels_path_for(path);
  if (std::filesystem::exists(lpath)) {
    std::ifstream lin(lpath);
    std::getline(lin, line);
    if (detail::split_csv_line(line) != std::vector<std::string>{"sample_id", "label"}) {
      throw ValidationError(lpath.string() + ":1: expected header sample_id,label");
    }
    std::map<std::string, int> labels;
    lineno = 1;
    while (std::getline(lin, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      const std::string where = lpath.string() + ":" + std::to_string(lineno);
      const auto f = detail::split_csv_line(line);
      if (f.size() != 2) throw ValidationError(where + ": expected 2 fields");
      const long v = detail::parse_int(f[1], where);
      if (v < 0) throw ValidationError(where + ": negative label");
      if (labels.count(f[0])) throw ValidationError(where + ": duplicate label for sample '" + f[0] + "'");
      labels[f[0]] = static_cast<int>(v);
    }
    int max_label = -1;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto it = labels.find(ds.ids[i]);
      if (it == labels.end()) throw ValidationError(lpath.string() + ": no label for sample '" + ds.ids[i] + "'");
      ds.samples[i].label = it->second;
      max_label = std::max(max_label, it->second);
    }
    ds.n_classes = static_cast<std::size_t>(max_label + 1);
    ds.provenance["labels"] = lpath.string();
  }
  return ds;
}

/// Writes every (time, channel) cell; missing cells get an empty value so time
/// points with no observation survive a round trip.
inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "sample_id,time,channel,value\n";
  auto id_of = [&](std::size_t i) { return i < ds.ids.size() ? ds.ids[i] : std::to_string(i); };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.samples[i];
    for (std::size_t k = 0; k < s.length(); ++k) {
      for (std::size_t c = 0; c < s.channels; ++c) {
        out << id_of(i) << ',' << detail::format_double(s.times[k]) << ',' << c << ',';
        if (s.observed(k, c)) out << detail::format_double(s.value(k, c));
        out << '\n';
      }
    }
  }
  bool labelled = !ds.samples.empty();
  for (const auto& s : ds.samples) labelled = labelled && s.label.has_value();
  if (labelled) {
    std::ofstream lout(labels_path_for(path));
    lout << "sample_id,label\n";
    for (std::size_t i = 0; i < ds.size(); ++i) lout << id_of(i) << ',' << *ds.samples[i].label << '\n';
  }
}

// ---------------------------------------------------------------------------
// Transformations

/// Masks each observed cell with probability `rate`; a channel that would lose every
/// observation keeps one of its former observations, chosen uniformly.
inline Dataset inject_missing(const Dataset& ds, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("missing rate must lie in [0, 1)");
  Dataset out = ds;
  if (rate == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& s = out.samples[i];
    Rng rng(derive_seed(seed, {i}));
    for (std::size_t c = 0; c < s.channels; ++c) {
      std::vector<std::size_t> before;
      std::size_t kept = 0;
      for (std::size_t k = 0; k < s.length(); ++k) {
        if (!s.observed(k, c)) continue;
        before.push_back(k);
        if (rng.bernoulli(rate)) {
          s.mask[k * s.channels + c] = 0;
        } else {
          ++kept;
        }
      }
      if (kept == 0 && !before.empty()) {
        const std::size_t k = before[rng.index(before.size())];
        s.mask[k * s.channels + c] = 1;
      }
    }
  }
  out.provenance["missing_rate"] = rate;
  out.provenance["missing_seed"] = seed;
  return out;
}

struct ScaleReport {
  std::size_t target_len = 0;
  std::size_t collisions = 0;
};

/// Maps every sample onto a common grid of `target_len` points over [0, 1].
/// Observations go to the nearest grid point (ties to the earlier); when two land
/// in one cell the later observation wins. target_len = 0 uses the longest sample.
inline Dataset uniform_scale(const Dataset& ds, std::size_t target_len, ScaleReport* report = nullptr) {
  std::size_t longest = 0;
  for (const auto& s : ds.samples) longest = std::max(longest, s.length());
  const std::size_t L = target_len == 0 ? longest : target_len;
  if (L < 2) throw TooFewKnots("uniform_scale: target length must be at least 2");
  Dataset out = ds;
  ScaleReport rep{L, 0};
  std::vector<double> grid(L);
  for (std::size_t i = 0; i < L; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(L - 1);
  for (auto& s : out.samples) {
    const IrregularSeries src = s;
    const double t0 = src.times.front(), span = src.times.back() - t0;
    s.times = grid;
    s.values.assign(L * s.channels, 0.0);
    s.mask.assign(L * s.channels, 0);
    for (std::size_t k = 0; k < src.length(); ++k) {
      const double x = (src.times[k] - t0) / span * static_cast<double>(L - 1);
      const auto idx = static_cast<std::size_t>(std::clamp(std::ceil(x - 0.5), 0.0, static_cast<double>(L - 1)));
      for (std::size_t c = 0; c < s.channels; ++c) {
        if (!src.observed(k, c)) continue;
        if (s.mask[idx * s.channels + c]) ++rep.collisions;
        s.values[idx * s.channels + c] = src.value(k, c);
        s.mask[idx * s.channels + c] = 1;
      }
    }
  }
  out.provenance["target_len"] = L;
  out.provenance["collisions"] = rep.collisions;
  if (report) *report = rep;
  return out;
}

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> constant;  // passed through unscaled
};

inline nlohmann::json to_json(const NormStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"constant", s.constant}};
}

/// Per-channel mean / standard deviation over the observed cells of `indices`.
inline NormStats channel_stats(const Dataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t d = ds.n_channels;
  NormStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), std::vector<bool>(d, false)};
  for (std::size_t c = 0; c < d; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (auto i : indices) {
      const auto& s = ds.samples[i];
      for (std::size_t k = 0; k < s.length(); ++k) {
        if (s.observed(k, c)) {
          sum += s.value(k, c);
          ++n;
        }
      }
    }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    double sq = 0.0;
    for (auto i : indices) {
      const auto& s = ds.samples[i];
      for (std::size_t k = 0; k < s.length(); ++k) {
        if (s.observed(k, c)) sq += (s.value(k, c) - mean) * (s.value(k, c) - mean);
      }
    }
    const double sd = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    st.mean[c] = mean;
    st.constant[c] = !(sd > 1e-12 * std::max(1.0, std::fabs(mean)));
    st.std[c] = st.constant[c] ? 1.0 : sd;
  }
  return st;
}

/// z-scores observed cells with the given statistics; constant channels pass through.
inline Dataset normalize(const Dataset& ds, const NormStats& st) {
  Dataset out = ds;
  for (auto& s : out.samples) {
    for (std::size_t k = 0; k < s.length(); ++k) {
      for (std::size_t c = 0; c < s.channels; ++c) {
        if (!s.observed(k, c) || st.constant[c]) continue;
        s.values[k * s.channels + c] = (s.values[k * s.channels + c] - st.mean[c]) / st.std[c];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SynthKind { spirals, damped_oscillator, ou_vs_gbm };

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::spirals: return "spirals";
    case SynthKind::damped_oscillator: return "damped-oscillator";
    default: return "ou-vs-gbm";
  }
}

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "spirals") return SynthKind::spirals;
  if (s == "damped-oscillator") return SynthKind::damped_oscillator;
  if (s == "ou-vs-gbm") return SynthKind::ou_vs_gbm;
  throw ValidationError("unknown synthetic dataset '" + s + "'");
}

/// Two-class synthetic sets on irregular times (sorted uniform draws on [0, 1]).
/// Labels alternate 0, 1, 0, ... .
///   spirals: r = a t, angle +-2 pi t (class 0 counter-clockwise, class 1 clockwise),
///            channels (r cos, r sin), a ~ U(0.8, 1.2).
///   damped-oscillator: sin(2 pi f t + phi) exp(-lambda t), lambda = 1 or 4.
///   ou-vs-gbm: OU (theta 2, sigma 0.5) vs GBM (mu 0.5, sigma 0.5), both from 1.
inline Dataset synth(SynthKind kind, std::size_t n_samples, std::size_t length, double noise, std::uint64_t seed) {
  if (n_samples < 4) throw ValidationError("synth: need at least 4 samples");
  if (length < 8) throw ValidationError("synth: need length >= 8");
  if (noise < 0.0) throw ValidationError("synth: noise must be non-negative");
  Dataset ds;
  ds.name = to_string(kind);
  ds.n_channels = kind == SynthKind::spirals ? 2 : 1;
  ds.n_classes = 2;
  ds.provenance = {{"generator", ds.name}, {"n_samples", n_samples}, {"length", length}, {"noise", noise}, {"seed", seed}};
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng rng(derive_seed(seed, {i}));
    const int label = static_cast<int>(i % 2);
    IrregularSeries s;
    s.channels = ds.n_channels;
    s.label = label;
    s.times.resize(length);
    for (double& t : s.times) t = rng.uniform();
    std::sort(s.times.begin(), s.times.end());
    s.times.erase(std::unique(s.times.begin(), s.times.end()), s.times.end());
    s.mask.assign(s.length() * s.channels, 1);
    switch (kind) {
      case SynthKind::spirals: {
        const double a = rng.uniform(0.8, 1.2), dir = label == 0 ? 1.0 : -1.0;
        for (double t : s.times) {
          const double r = a * t, th = dir * two_pi * t;
          s.values.push_back(r * std::cos(th) + noise * rng.normal());
          s.values.push_back(r * std::sin(th) + noise * rng.normal());
        }
        break;
      }
      case SynthKind::damped_oscillator: {
        const double f = rng.uniform(1.5, 2.5), phi = rng.uniform(0.0, two_pi), lambda = label == 0 ? 1.0 : 4.0;
        for (double t : s.times) s.values.push_back(std::sin(two_pi * f * t + phi) * std::exp(-lambda * t) + noise * rng.normal());
        break;
      }
      case SynthKind::ou_vs_gbm: {
        double x = 1.0, prev = 0.0;
        for (double t : s.times) {
          const double h = t - prev;
          if (label == 0) {
            const double theta = 2.0, sigma = 0.5;
            x = x * std::exp(-theta * h) + sigma * std::sqrt((1.0 - std::exp(-2.0 * theta * h)) / (2.0 * theta)) * rng.normal();
          } else {
            const double mu = 0.5, sigma = 0.5;
            x = x * std::exp((mu - 0.5 * sigma * sigma) * h + sigma * std::sqrt(h) * rng.normal());
          }
          prev = t;
          s.values.push_back(x + noise * rng.normal());
        }
        break;
      }
    }
    ds.samples.push_back(std::move(s));
    ds.ids.push_back(std::to_string(i));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Hashing and preparation

/// FNV-1a over a canonical encoding of times, observed values, masks and labels.
inline std::string dataset_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  auto mix_u64 = [&](std::uint64_t v) { mix(&v, sizeof v); };
  auto mix_f64 = [&](double v) { mix(&v, sizeof v); };
  mix_u64(ds.n_channels);
  mix_u64(ds.size());
  for (const auto& s : ds.samples) {
    mix_u64(s.length());
    for (double t : s.times) mix_f64(t);
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      mix_u64(s.mask[i]);
      mix_f64(s.mask[i] ? s.values[i] : 0.0);
    }
    mix_u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(s.label.value_or(-1))));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct PrepConfig {
  double missing_rate = 0.0;
  std::uint64_t missing_seed = 0;
  bool scale = false;
  std::size_t target_len = 0;
  bool normalize = true;
  double time_scale = 1.0;  // multiplies every timestamp after scaling
};

struct Prepared {
  Dataset data;
  NormStats stats;
  ScaleReport scale;
  nlohmann::json manifest;
};

/// The fixed preparation order: corrupt, then scale, then normalize with statistics
/// taken from the training indices.
inline Prepared prepare(const Dataset& raw, const PrepConfig& cfg, const std::vector<std::size_t>& train_indices) {
  Prepared out;
  std::vector<std::string> stages;
  out.data = inject_missing(raw, cfg.missing_rate, cfg.missing_seed);
  stages.push_back("corrupt");
  if (cfg.scale) {
    out.data = uniform_scale(out.data, cfg.target_len, &out.scale);
    stages.push_back("scale");
  }
  if (cfg.time_scale != 1.0) {
    if (!(cfg.time_scale > 0.0)) throw ValidationError("time_scale must be positive");
    for (auto& s : out.data.samples) {
      for (double& t : s.times) t *= cfg.time_scale;
    }
    stages.push_back("time-scale");
  }
  if (cfg.normalize) {
    out.stats = channel_stats(out.data, train_indices);
    out.data = normalize(out.data, out.stats);
    stages.push_back("normalize");
  }
  out.manifest = {{"stages", stages},
                  {"missing_rate", cfg.missing_rate},
                  {"missing_seed", cfg.missing_seed},
                  {"target_len", out.scale.target_len},
                  {"collisions", out.scale.collisions},
                  {"time_scale", cfg.time_scale},
                  {"raw_hash", dataset_hash(raw)},
                  {"prepared_hash", dataset_hash(out.data)}};
  if (cfg.normalize) out.manifest["normalization"] = to_json(out.stats);
  return out;
}

}  // namespace nsde
