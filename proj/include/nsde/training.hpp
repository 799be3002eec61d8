#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "nsde/adam.hpp"
#include "nsde/brownian.hpp"
#include "nsde/dataset.hpp"
#include "nsde/model.hpp"
#include "nsde/path.hpp"
#include "nsde/solver.hpp"

namespace nsde {

enum class Task { classification, interpolation, forecasting };

inline std::string to_string(Task t) {
  switch (t) {
    case Task::classification: return "classification";
    case Task::interpolation: return "interpolation";
    default: return "forecasting";
  }
}

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "interpolation") return Task::interpolation;
  if (s == "forecasting") return Task::forecasting;
  throw ValidationError("unknown task '" + s + "'");
}

struct TrainConfig {
  Task task = Task::classification;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double readout_lr_multiplier = 100.0;
  std::size_t patience = 10;
  bool early_stopping = true;
  double train_ratio = 0.70;
  double val_ratio = 0.15;
  double test_ratio = 0.15;
  std::uint64_t split_seed = 0;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;
  std::size_t eval_mc = 1;
  PathScheme path_scheme = PathScheme::natural_cubic;
  // Abort when more than half of a batch explodes this many batches in a row.
  std::size_t explosion_patience = 3;

  void check() const {
    if (std::fabs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
    if (train_ratio <= 0.0 || val_ratio < 0.0 || test_ratio < 0.0) throw ValidationError("split ratios must be non-negative");
    if (patience == 0) throw ValidationError("patience must be >= 1");
    if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
    if (eval_mc == 0) throw ValidationError("eval_mc must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Splitting

struct Split {
  std::vector<std::size_t> train, val, test;
  std::vector<std::string> warnings;
};

/// Stratified split. Global validation / test counts are round(ratio n) over the
/// eligible samples, shared across classes by largest remainder; classes with
/// fewer than 3 samples go entirely to train.
inline Split split_indices(const std::vector<int>& labels, double val_ratio, double test_ratio, std::uint64_t seed) {
  if (labels.empty()) throw ValidationError("split: empty dataset");
  Split out;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::pair<int, std::vector<std::size_t>>> classes;
  std::size_t eligible = 0;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(static_cast<std::int64_t>(label))}));
    rng.shuffle(idx);
    if (idx.size() < 3) {
      out.warnings.push_back("class " + std::to_string(label) + " has fewer than 3 samples; all go to train");
      out.train.insert(out.train.end(), idx.begin(), idx.end());
      continue;
    }
    eligible += idx.size();
    classes.emplace_back(label, std::move(idx));
  }

  // Largest-remainder allocation of `total` over classes in proportion to `sizes`.
  auto allocate = [](std::size_t total, const std::vector<std::size_t>& sizes) {
    const double sum = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
    std::vector<std::size_t> q(sizes.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      const double exact = sum > 0 ? static_cast<double>(total) * static_cast<double>(sizes[c]) / sum : 0.0;
      q[c] = std::min(sizes[c], static_cast<std::size_t>(std::floor(exact)));
      used += q[c];
      rem.emplace_back(-(exact - std::floor(exact)), c);
    }
    std::sort(rem.begin(), rem.end());
    for (std::size_t i = 0; used < total && i < rem.size(); ++i) {
      const std::size_t c = rem[i].second;
      if (q[c] < sizes[c]) {
        ++q[c];
        ++used;
      }
    }
    return q;
  };

  const auto n_val = static_cast<std::size_t>(std::llround(val_ratio * static_cast<double>(eligible)));
  const auto n_test = static_cast<std::size_t>(std::llround(test_ratio * static_cast<double>(eligible)));
  std::vector<std::size_t> sizes;
  for (auto& c : classes) sizes.push_back(c.second.size());
  const auto qv = allocate(n_val, sizes);
  std::vector<std::size_t> rest(sizes.size());
  for (std::size_t c = 0; c < sizes.size(); ++c) rest[c] = sizes[c] - qv[c];
  const auto qt = allocate(n_test, rest);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& idx = classes[c].second;
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<long>(qv[c]));
    out.test.insert(out.test.end(), idx.begin() + static_cast<long>(qv[c]), idx.begin() + static_cast<long>(qv[c] + qt[c]));
    out.train.insert(out.train.end(), idx.begin() + static_cast<long>(qv[c] + qt[c]), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline Split split(const Dataset& ds, const TrainConfig& cfg) {
  cfg.check();
  std::vector<int> labels = ds.labels();
  if (cfg.task != Task::classification || ds.n_classes == 0) labels.assign(ds.size(), 0);
  return split_indices(labels, cfg.val_ratio, cfg.test_ratio, cfg.split_seed);
}

// ---------------------------------------------------------------------------
// Task data

/// What the solver and loss consume for a set of samples: one cached path per
/// sample plus labels or regression targets.
struct TaskData {
  Task task = Task::classification;
  std::size_t n_classes = 0;
  std::size_t target_dim = 0;
  std::vector<ControlledPath> paths;
  std::vector<int> labels;
  std::vector<double> targets;             // size() x target_dim
  std::vector<std::uint8_t> target_mask;   // size() x target_dim

  std::size_t size() const { return paths.size(); }
  std::size_t output_dim() const { return task == Task::classification ? n_classes : target_dim; }
};

/// Classification data: each sample's path over all its observations.
inline TaskData classification_data(const Dataset& ds, const std::vector<std::size_t>& indices, PathScheme scheme) {
  TaskData td;
  td.task = Task::classification;
  td.n_classes = ds.n_classes;
  for (auto i : indices) {
    const auto& s = ds.samples[i];
    if (!s.label) throw ValidationError("classification needs labels (sample " + std::to_string(i) + ")");
    td.paths.push_back(build_path(s, scheme));
    td.labels.push_back(*s.label);
  }
  return td;
}

namespace detail {

inline IrregularSeries keep_points(const IrregularSeries& s, const std::vector<std::size_t>& keep) {
  IrregularSeries out;
  out.channels = s.channels;
  out.label = s.label;
  for (auto k : keep) {
    out.times.push_back(s.times[k]);
    for (std::size_t c = 0; c < s.channels; ++c) {
      out.values.push_back(s.value(k, c));
      out.mask.push_back(s.mask[k * s.channels + c]);
    }
  }
  return out;
}

inline void append_targets(TaskData& td, const IrregularSeries& s, const std::vector<std::size_t>& points) {
  for (auto k : points) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      td.targets.push_back(s.observed(k, c) ? s.value(k, c) : 0.0);
      td.target_mask.push_back(s.mask[k * s.channels + c]);
    }
  }
}

// Every channel of the input part needs an observation; if not, borrow the nearest one.
inline void ensure_observed(IrregularSeries& part, const IrregularSeries& full) {
  for (std::size_t c = 0; c < part.channels; ++c) {
    if (part.observed_count(c) > 0) continue;
    for (std::size_t k = 0; k < full.length(); ++k) {
      if (full.observed(k, c)) {
        part.values[c] = full.value(k, c);
        part.mask[c] = 1;
        break;
      }
    }
  }
}

}  // namespace detail

/// Forecasting on a common grid: the first length - horizon points are input, the
/// last `horizon` points (all channels) are the target.
inline TaskData forecasting_data(const Dataset& ds, const std::vector<std::size_t>& indices, std::size_t horizon,
                                 PathScheme scheme) {
  TaskData td;
  td.task = Task::forecasting;
  for (auto i : indices) {
    const auto& s = ds.samples[i];
    if (s.length() < horizon + 2) throw ValidationError("forecasting: series shorter than horizon + 2");
    std::vector<std::size_t> in, out;
    for (std::size_t k = 0; k < s.length(); ++k) (k + horizon < s.length() ? in : out).push_back(k);
    if (td.target_dim == 0) td.target_dim = out.size() * s.channels;
    if (out.size() * s.channels != td.target_dim) throw ValidationError("forecasting: samples need a common length");
    auto part = detail::keep_points(s, in);
    detail::ensure_observed(part, s);
    td.paths.push_back(build_path(part, scheme));
    detail::append_targets(td, s, out);
  }
  return td;
}

/// Interpolation on a common grid: every `stride`-th interior point is held out and
/// predicted from the rest.
inline TaskData interpolation_data(const Dataset& ds, const std::vector<std::size_t>& indices, std::size_t stride,
                                   PathScheme scheme) {
  if (stride < 2) throw ValidationError("interpolation: stride must be >= 2");
  TaskData td;
  td.task = Task::interpolation;
  for (auto i : indices) {
    const auto& s = ds.samples[i];
    std::vector<std::size_t> in, out;
    for (std::size_t k = 0; k < s.length(); ++k) {
      const bool held = k > 0 && k + 1 < s.length() && k % stride == 0;
      (held ? out : in).push_back(k);
    }
    if (td.target_dim == 0) td.target_dim = out.size() * s.channels;
    if (out.size() * s.channels != td.target_dim) throw ValidationError("interpolation: samples need a common length");
    auto part = detail::keep_points(s, in);
    detail::ensure_observed(part, s);
    td.paths.push_back(build_path(part, scheme));
    detail::append_targets(td, s, out);
  }
  return td;
}

inline TaskData task_data(const Dataset& ds, const std::vector<std::size_t>& indices, Task task, PathScheme scheme,
                          std::size_t task_param = 0) {
  switch (task) {
    case Task::classification: return classification_data(ds, indices, scheme);
    case Task::forecasting: return forecasting_data(ds, indices, task_param ? task_param : 4, scheme);
    default: return interpolation_data(ds, indices, task_param ? task_param : 4, scheme);
  }
}

// ---------------------------------------------------------------------------
// Loss and metrics

/// Softmax cross-entropy (classification) or masked MSE (regression).
inline Tensor task_loss(Task task, const Tensor& outputs, const std::vector<int>& labels, const Tensor& targets = {},
                        const std::vector<std::uint8_t>& mask = {}) {
  if (task == Task::classification) return softmax_cross_entropy(outputs, labels);
  return masked_mse(outputs, targets, mask);
}

/// Mann-Whitney AUROC of scores for the positive class; ties share ranks.
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) throw ValidationError("auroc: need both classes present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

struct Metrics {
  Task task = Task::classification;
  std::size_t n = 0;
  double loss = 0.0;  // cross-entropy or mse
  double accuracy = 0.0;
  std::optional<double> auroc_value;
  std::size_t exploded = 0;

  /// Headline metric: accuracy for classification, mse otherwise.
  double metric() const { return task == Task::classification ? accuracy : loss; }
};

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j = {{"task", to_string(m.task)}, {"n", m.n}, {"exploded", m.exploded}};
  if (m.task == Task::classification) {
    j["accuracy"] = m.accuracy;
    j["cross_entropy"] = m.loss;
    if (m.auroc_value) j["auroc"] = *m.auroc_value;
  } else {
    j["mse"] = m.loss;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Forward pass over a batch

struct BatchOutput {
  Tensor outputs;             // [B, out]
  std::vector<long> exploded_at;
};

inline std::vector<std::uint64_t> noise_seeds(std::uint64_t root, std::initializer_list<std::uint64_t> prefix,
                                              const std::vector<std::size_t>& rows) {
  std::vector<std::uint64_t> out;
  const std::uint64_t base = derive_seed(root, prefix);
  for (auto r : rows) out.push_back(derive_seed(base, {r}));
  return out;
}

inline BatchOutput forward_batch(const SdeModel& model, const TaskData& data, const std::vector<std::size_t>& rows,
                                 const std::vector<std::uint64_t>& seeds, const SolveConfig& scfg, Mode mode,
                                 std::uint64_t dropout_seed) {
  std::vector<const ControlledPath*> paths;
  for (auto r : rows) paths.push_back(&data.paths[r]);
  const BrownianBatch bm(seeds, model.latent_dim(), scfg.dt(), scfg.n_steps);
  SolveConfig cfg = scfg;
  cfg.record_states = false;
  cfg.throw_on_explosion = false;
  const Trajectory tr = solve(model, paths, bm, cfg, mode);
  return {readout(model, tr.terminal, mode, dropout_seed), tr.exploded_at};
}

/// Evaluation: outputs averaged over `n_mc` Brownian draws (seeded independently of
/// training epochs). Exploded samples count as uniform logits (loss ln C, wrong
/// prediction) or as zero predictions for regression.
inline Metrics evaluate(const SdeModel& model, const TaskData& data, const SolveConfig& scfg, std::size_t n_mc,
                        std::uint64_t seed, std::size_t chunk = 256) {
  NoGradGuard no_grad;
  Metrics m;
  m.task = data.task;
  m.n = data.size();
  if (data.size() == 0) return m;
  const std::size_t out_dim = data.output_dim();
  std::vector<double> sum(data.size() * out_dim, 0.0);
  std::vector<std::size_t> ok(data.size(), 0);
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t r = lo; r < std::min(data.size(), lo + chunk); ++r) rows.push_back(r);
    for (std::size_t d = 0; d < n_mc; ++d) {
      const auto out = forward_batch(model, data, rows, noise_seeds(seed, {0xe7a1, d}, rows), scfg, Mode::eval, 0);
      for (std::size_t b = 0; b < rows.size(); ++b) {
        if (out.exploded_at[b] >= 0) continue;
        ++ok[rows[b]];
        for (std::size_t j = 0; j < out_dim; ++j) sum[rows[b] * out_dim + j] += out.outputs(b, j);
      }
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (ok[i] == 0) {
      ++m.exploded;
      continue;
    }
    for (std::size_t j = 0; j < out_dim; ++j) sum[i * out_dim + j] /= static_cast<double>(ok[i]);
  }

  if (data.task == Task::classification) {
    const std::size_t C = out_dim;
    double ce = 0.0, correct = 0.0;
    std::vector<double> score(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double* l = &sum[i * C];
      double mx = l[0];
      std::size_t arg = 0;
      for (std::size_t j = 1; j < C; ++j) {
        if (l[j] > mx) {
          mx = l[j];
          arg = j;
        }
      }
      double z = 0.0;
      for (std::size_t j = 0; j < C; ++j) z += std::exp(l[j] - mx);
      const auto y = static_cast<std::size_t>(data.labels[i]);
      if (y >= C) throw ValidationError("label out of range");
      ce += ok[i] ? -(l[y] - mx - std::log(z)) : std::log(static_cast<double>(C));
      correct += ok[i] && arg == y;
      score[i] = C == 2 ? l[1] - l[0] : 0.0;
    }
    m.loss = ce / static_cast<double>(data.size());
    m.accuracy = correct / static_cast<double>(data.size());
    if (C == 2) {
      bool both = std::find(data.labels.begin(), data.labels.end(), 0) != data.labels.end() &&
                  std::find(data.labels.begin(), data.labels.end(), 1) != data.labels.end();
      if (both) m.auroc_value = auroc(score, data.labels);
    }
  } else {
    double se = 0.0, cnt = 0.0;
    for (std::size_t i = 0; i < data.size() * out_dim; ++i) {
      if (!data.target_mask[i]) continue;
      se += (sum[i] - data.targets[i]) * (sum[i] - data.targets[i]);
      cnt += 1.0;
    }
    m.loss = cnt > 0 ? se / cnt : 0.0;
  }
  return m;
}

/// AUROC of a model on binary data; rejects more than two classes.
inline double evaluate_auroc(const SdeModel& model, const TaskData& data, const SolveConfig& scfg, std::size_t n_mc,
                             std::uint64_t seed) {
  if (data.task != Task::classification || data.n_classes != 2) throw ValidationError("auroc needs a binary task");
  return *evaluate(model, data, scfg, n_mc, seed).auroc_value;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_metric = 0.0;
  double seconds = 0.0;
  std::size_t exploded = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  std::optional<std::string> aborted;
  std::vector<std::string> warnings;
};

inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,train_loss,val_loss,val_metric\n";
  for (const auto& e : h.epochs) {
    out += std::to_string(e.epoch) + "," + detail::format_double(e.train_loss) + "," +
           detail::format_double(e.val_loss) + "," + detail::format_double(e.val_metric) + "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> snapshot(const SdeModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

inline void restore(SdeModel& m, const std::vector<std::vector<double>>& snap) {
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_values() = snap[i];
}

}  // namespace detail

/// Observer called after each epoch (e.g. for test-loss curves).
using EpochHook = std::function<void(const SdeModel&, const EpochRecord&)>;

/// Mini-batch Adam with fresh Brownian noise per (epoch, batch, sample), global-norm
/// clipping, early stopping on validation loss and restoration of the best epoch.
/// Exploded samples are left out of the batch loss; too many in a row aborts with
/// TrainingAborted. Non-finite gradients abort the same way.
inline TrainHistory train(SdeModel& model, const TaskData& train_data, const TaskData& val_data,
                          const TrainConfig& cfg, const SolveConfig& scfg, const EpochHook& hook = {}) {
  cfg.check();
  if (train_data.size() == 0) throw ValidationError("train: empty training set");
  if (model.config.output_dim != train_data.output_dim()) {
    throw ShapeError("model output_dim " + std::to_string(model.config.output_dim) + " does not match task output " +
                     std::to_string(train_data.output_dim()));
  }
  TrainHistory hist;
  AdamState adam;
  adam.lr = cfg.lr;
  auto groups = parameter_groups(model, cfg.readout_lr_multiplier);
  std::vector<std::vector<double>> best = detail::snapshot(model);
  std::size_t bad_run = 0;
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(cfg.seed, {0x5f, epoch}));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, loss_count = 0.0;
    std::size_t exploded_epoch = 0;
    for (std::size_t lo = 0, batch = 0; lo < order.size(); lo += cfg.batch_size, ++batch) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<long>(lo),
                                          order.begin() + static_cast<long>(std::min(order.size(), lo + cfg.batch_size)));
      const auto out = forward_batch(model, train_data, rows, noise_seeds(cfg.seed, {0xb7, epoch, batch}, rows), scfg,
                                     Mode::train, derive_seed(cfg.seed, {0xd0, epoch, batch}));
      std::size_t n_bad = 0;
      for (long e : out.exploded_at) n_bad += e >= 0;
      exploded_epoch += n_bad;
      if (2 * n_bad > rows.size()) {
        if (++bad_run >= cfg.explosion_patience) {
          hist.aborted = "numerical explosion in more than half of " + std::to_string(cfg.explosion_patience) +
                         " consecutive batches";
          throw TrainingAborted(*hist.aborted, epoch);
        }
      } else {
        bad_run = 0;
      }
      if (n_bad == rows.size()) continue;

      Tensor loss;
      if (train_data.task == Task::classification) {
        std::vector<int> labels;
        std::vector<double> w;
        for (std::size_t b = 0; b < rows.size(); ++b) {
          labels.push_back(train_data.labels[rows[b]]);
          w.push_back(out.exploded_at[b] >= 0 ? 0.0 : 1.0);
        }
        loss = softmax_cross_entropy(out.outputs, labels, w);
      } else {
        const std::size_t k = train_data.target_dim;
        std::vector<double> tgt;
        std::vector<std::uint8_t> mask;
        for (std::size_t b = 0; b < rows.size(); ++b) {
          for (std::size_t j = 0; j < k; ++j) {
            tgt.push_back(train_data.targets[rows[b] * k + j]);
            mask.push_back(out.exploded_at[b] >= 0 ? 0 : train_data.target_mask[rows[b] * k + j]);
          }
        }
        loss = masked_mse(out.outputs, Tensor::from(rows.size(), k, std::move(tgt)), std::move(mask));
      }
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw TrainingAborted("non-finite training loss", epoch);
      const double kept = static_cast<double>(rows.size() - n_bad);
      loss_sum += lv * kept;
      loss_count += kept;
      Gradients grads = backward(loss);
      clip_grad_norm(groups, grads, cfg.clip_norm);
      try {
        adam_step(groups, grads, adam);
      } catch (const AbortNonFinite& e) {
        throw TrainingAborted(e.what(), epoch);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_count > 0 ? loss_sum / loss_count : std::numeric_limits<double>::quiet_NaN();
    rec.exploded = exploded_epoch;
    if (val_data.size() > 0) {
      const Metrics vm = evaluate(model, val_data, scfg, cfg.eval_mc, derive_seed(cfg.seed, {0xea}));
      rec.val_loss = vm.loss;
      rec.val_metric = vm.metric();
    } else {
      rec.val_loss = rec.train_loss;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    hist.epochs.push_back(rec);
    if (hook) hook(model, rec);

    if (rec.val_loss < hist.best_val_loss) {
      hist.best_val_loss = rec.val_loss;
      hist.best_epoch = epoch;
      best = detail::snapshot(model);
    }
    if (cfg.early_stopping && epoch >= hist.best_epoch + cfg.patience) {
      hist.stopped_early = true;
      break;
    }
  }
  if (cfg.early_stopping) detail::restore(model, best);
  return hist;
}

/// Seed used for validation / test evaluation within `train` (and for reproducing it).
inline std::uint64_t evaluation_seed(const TrainConfig& cfg) { return derive_seed(cfg.seed, {0xea}); }

}  // namespace nsde
