#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "nsde/training.hpp"

using namespace nsde;

namespace {

// Two channels; class c carries a Gaussian bump in channel c.
Dataset two_bump(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.name = "two-bump";
  ds.n_channels = 2;
  ds.n_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, {i}));
    IrregularSeries s;
    s.channels = 2;
    s.label = static_cast<int>(i % 2);
    const double centre = rng.uniform(0.3, 0.7);
    for (std::size_t k = 0; k < 20; ++k) {
      const double t = static_cast<double>(k) / 19.0;
      s.times.push_back(t);
      const double bump = 2.0 * std::exp(-std::pow((t - centre) / 0.15, 2));
      s.values.push_back((*s.label == 0 ? bump : 0.0) + 0.1 * rng.normal());
      s.values.push_back((*s.label == 1 ? bump : 0.0) + 0.1 * rng.normal());
    }
    s.mask.assign(40, 1);
    ds.samples.push_back(s);
  }
  return ds;
}

ModelConfig small_model(ModelKind kind, std::size_t d_x, std::size_t out, std::uint64_t seed = 1) {
  ModelConfig c;
  c.kind = kind;
  c.input_dim = d_x;
  c.latent_dim = 8;
  c.n_hidden = 16;
  c.readout_hidden = 16;
  c.output_dim = out;
  c.seed = seed;
  return c;
}

SolveConfig small_solve() {
  SolveConfig s;
  s.n_steps = 20;
  return s;
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

}  // namespace

TEST(Split, BalancedHundredGivesSeventyFifteenFifteen) {
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) labels[i] = i % 2;
  const Split s = split_indices(labels, 0.15, 0.15, 3);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.val.size(), 15u);
  EXPECT_EQ(s.test.size(), 15u);
  long zeros = 0;
  for (auto i : s.train) zeros += labels[i] == 0;
  EXPECT_LE(std::abs(zeros - 35), 1);
}

TEST(Split, SameSeedSamePartition) {
  std::vector<int> labels(60);
  for (int i = 0; i < 60; ++i) labels[i] = i % 3;
  const Split a = split_indices(labels, 0.15, 0.15, 9);
  const Split b = split_indices(labels, 0.15, 0.15, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  const Split c = split_indices(labels, 0.15, 0.15, 10);
  EXPECT_NE(a.val, c.val);
}

TEST(Split, ExactPartitionOverRandomDatasets) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(200);
    const std::size_t classes = 1 + rng.index(6);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.index(classes));
    const Split s = split_indices(labels, 0.15, 0.15, static_cast<std::uint64_t>(trial));
    std::vector<std::size_t> all;
    all.insert(all.end(), s.train.begin(), s.train.end());
    all.insert(all.end(), s.val.begin(), s.val.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, range(0, n));
  }
}

TEST(Split, TinyClassGoesToTrainWithWarning) {
  std::vector<int> labels{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1};
  const Split s = split_indices(labels, 0.15, 0.15, 1);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(std::find(s.train.begin(), s.train.end(), 10u), s.train.end());
  EXPECT_NE(std::find(s.train.begin(), s.train.end(), 11u), s.train.end());
}

TEST(Split, RatiosAreChecked) {
  TrainConfig cfg;
  cfg.val_ratio = 0.2;
  EXPECT_THROW(cfg.check(), ValidationError);
  cfg = TrainConfig{};
  cfg.patience = 0;
  EXPECT_THROW(cfg.check(), ValidationError);
  EXPECT_THROW(split_indices({}, 0.15, 0.15, 0), ValidationError);
}

TEST(Loss, UniformLogitsGiveLogC) {
  const Tensor logits = Tensor::full(5, 4, 0.3);
  const double l = task_loss(Task::classification, logits, {0, 1, 2, 3, 1}).item();
  EXPECT_NEAR(l, std::log(4.0), 1e-12);
  EXPECT_NEAR(l, 1.386294, 1e-6);
}

TEST(Loss, ScaledOneHotIsNearZero) {
  std::vector<double> v(3 * 3, 0.0);
  std::vector<int> labels{2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) v[i * 3 + labels[i]] = 20.0;
  const double l = task_loss(Task::classification, Tensor::from(3, 3, v), labels).item();
  EXPECT_LT(l, 1e-8);
  EXPECT_GE(l, 0.0);
}

TEST(Loss, LabelOutOfRangeThrows) {
  EXPECT_THROW(task_loss(Task::classification, Tensor::full(2, 2, 0.0), {0, 2}), Error);
}

TEST(Loss, ZeroPredictionMseMatchesVariance) {
  Rng rng(3);
  const std::size_t n = 10000;
  std::vector<double> y(n);
  for (auto& v : y) v = rng.normal();
  const double mse = task_loss(Task::forecasting, Tensor::full(n, 1, 0.0), {}, Tensor::from(n, 1, y)).item();
  EXPECT_NEAR(mse, 1.0, 3.0 * std::sqrt(2.0 / static_cast<double>(n)));
}

TEST(Loss, CrossEntropyNonNegativeAndMinimalOnlyWhenConstant) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(3);
    for (auto& x : v) x = rng.normal();
    const double l = task_loss(Task::classification, Tensor::from(1, 3, v), {static_cast<int>(rng.index(3))}).item();
    EXPECT_GE(l, 0.0);
  }
}

TEST(Auroc, PerfectSeparationIsOne) {
  EXPECT_DOUBLE_EQ(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
  EXPECT_DOUBLE_EQ(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
}

TEST(Auroc, IndependentScoresNearHalf) {
  Rng rng(4);
  std::vector<double> s(10000);
  std::vector<int> l(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal();
    l[i] = rng.bernoulli(0.5);
  }
  EXPECT_NEAR(auroc(s, l), 0.5, 0.02);
}

TEST(Auroc, MatchesPairCountingOracle) {
  Rng rng(6);
  std::vector<double> s(300);
  std::vector<int> l(300);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = rng.bernoulli(0.3);
    s[i] = std::round(4.0 * (rng.normal() + l[i])) / 4.0;  // many ties
  }
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[i] != 1 || l[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  EXPECT_NEAR(auroc(s, l), wins / pairs, 1e-12);
}

TEST(Evaluate, AurocRejectsMulticlass) {
  Dataset ds = two_bump(12, 1);
  ds.n_classes = 3;
  const TaskData td = classification_data(ds, range(0, 12), PathScheme::linear);
  const SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 3));
  EXPECT_THROW(evaluate_auroc(m, td, small_solve(), 1, 0), ValidationError);
}

TEST(Evaluate, NodeIsDeterministicAcrossDraws) {
  const Dataset ds = two_bump(24, 2);
  const TaskData td = classification_data(ds, range(0, 24), PathScheme::natural_cubic);
  const SdeModel m = make_model(small_model(ModelKind::node, 2, 2));
  const Metrics a = evaluate(m, td, small_solve(), 1, 3);
  const Metrics b = evaluate(m, td, small_solve(), 5, 4);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(*a.auroc_value, *b.auroc_value);
}

TEST(Evaluate, ExplodedSamplesCountAsUniformAndWrong) {
  const Dataset ds = two_bump(10, 2);
  const TaskData td = classification_data(ds, range(0, 10), PathScheme::linear);
  SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 2));
  SolveConfig s = small_solve();
  s.explosion_threshold = 1e-9;  // every row trips immediately
  const Metrics met = evaluate(m, td, s, 2, 0);
  EXPECT_EQ(met.exploded, 10u);
  EXPECT_EQ(met.accuracy, 0.0);
  EXPECT_NEAR(met.loss, std::log(2.0), 1e-12);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset ds = two_bump(20, 3);
  const TaskData tr = classification_data(ds, range(0, 14), PathScheme::natural_cubic);
  const TaskData va = classification_data(ds, range(14, 20), PathScheme::natural_cubic);
  SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 2));
  const auto before = detail::snapshot(m);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.max_epochs = 3;
  cfg.batch_size = 16;
  const TrainHistory h = train(m, tr, va, cfg, small_solve());
  EXPECT_EQ(detail::snapshot(m), before);
  ASSERT_EQ(h.epochs.size(), 3u);
  for (const auto& e : h.epochs) EXPECT_EQ(e.val_loss, h.epochs[0].val_loss);
}

TEST(Train, EarlyStopHaltsAtBestPlusPatience) {
  const Dataset ds = two_bump(16, 3);
  const TaskData tr = classification_data(ds, range(0, 10), PathScheme::linear);
  const TaskData va = classification_data(ds, range(10, 16), PathScheme::linear);
  SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 2));
  TrainConfig cfg;
  cfg.lr = 0.0;  // validation loss plateaus from the first epoch
  cfg.patience = 4;
  cfg.max_epochs = 50;
  const TrainHistory h = train(m, tr, va, cfg, small_solve());
  EXPECT_TRUE(h.stopped_early);
  EXPECT_EQ(h.best_epoch, 0u);
  EXPECT_EQ(h.epochs.size(), h.best_epoch + cfg.patience + 1);
}

TEST(Train, SeparableTwoBumpReachesHighAccuracy) {
  const Dataset ds = two_bump(120, 11);
  const Split sp = split_indices(ds.labels(), 0.15, 0.15, 1);
  const TaskData tr = classification_data(ds, sp.train, PathScheme::natural_cubic);
  const TaskData va = classification_data(ds, sp.val, PathScheme::natural_cubic);
  ModelConfig mc;
  mc.input_dim = 2;
  mc.seed = 2;
  SdeModel m = make_model(mc);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 16;
  const TrainHistory h = train(m, tr, va, cfg, small_solve());
  double best = 0;
  for (const auto& e : h.epochs) best = std::max(best, e.val_metric);
  EXPECT_GE(best, 0.95);
  const Metrics vm = evaluate(m, va, small_solve(), cfg.eval_mc, evaluation_seed(cfg));
  EXPECT_GE(vm.accuracy, 0.95);
}

TEST(Train, BestModelIsRestored) {
  const Dataset ds = two_bump(40, 12);
  const TaskData tr = classification_data(ds, range(0, 28), PathScheme::natural_cubic);
  const TaskData va = classification_data(ds, range(28, 40), PathScheme::natural_cubic);
  SdeModel m = make_model(small_model(ModelKind::gsde, 2, 2));
  TrainConfig cfg;
  cfg.max_epochs = 8;
  cfg.lr = 5e-3;
  cfg.batch_size = 16;
  const TrainHistory h = train(m, tr, va, cfg, small_solve());
  for (const auto& e : h.epochs) EXPECT_GE(e.val_loss, h.best_val_loss);
  const Metrics vm = evaluate(m, va, small_solve(), cfg.eval_mc, evaluation_seed(cfg));
  EXPECT_NEAR(vm.loss, h.best_val_loss, 1e-12);
}

TEST(Train, BitwiseDeterministic) {
  const Dataset ds = two_bump(30, 13);
  const TaskData tr = classification_data(ds, range(0, 20), PathScheme::hermite_cubic_backward);
  const TaskData va = classification_data(ds, range(20, 30), PathScheme::hermite_cubic_backward);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 77;
  SdeModel a = make_model(small_model(ModelKind::lnsde, 2, 2, 5));
  SdeModel b = make_model(small_model(ModelKind::lnsde, 2, 2, 5));
  const auto ha = train(a, tr, va, cfg, small_solve());
  const auto hb = train(b, tr, va, cfg, small_solve());
  EXPECT_EQ(history_csv(ha), history_csv(hb));
  EXPECT_EQ(detail::snapshot(a), detail::snapshot(b));
  cfg.seed = 78;
  SdeModel c = make_model(small_model(ModelKind::lnsde, 2, 2, 5));
  EXPECT_NE(history_csv(train(c, tr, va, cfg, small_solve())), history_csv(ha));
}

TEST(Train, ReadoutFinalLayerMovesHundredTimesFaster) {
  const Dataset ds = two_bump(8, 1);
  const TaskData tr = classification_data(ds, range(0, 8), PathScheme::linear);
  SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 2));
  const auto groups = parameter_groups(m, 100.0);
  // Unit gradients everywhere: the first Adam step is lr * multiplier per entry.
  Gradients g;
  for (const auto& grp : groups) {
    for (const auto& p : grp.params) g.map()[p.id()] = std::vector<double>(p.size(), 1.0);
  }
  auto gs = groups;
  AdamState st;
  st.lr = 1e-3;
  std::vector<std::vector<double>> before;
  for (const auto& grp : gs) before.emplace_back(grp.params[0].values().begin(), grp.params[0].values().end());
  adam_step(gs, g, st);
  const double base_step = std::fabs(gs[0].params[0].values()[0] - before[0][0]);
  const double head_step = std::fabs(gs[1].params[0].values()[0] - before[1][0]);
  EXPECT_NEAR(head_step / base_step, 100.0, 1e-6);
  (void)tr;
}

TEST(Train, RejectsMismatchedOutputDim) {
  const Dataset ds = two_bump(8, 1);
  const TaskData tr = classification_data(ds, range(0, 8), PathScheme::linear);
  SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 3));
  EXPECT_THROW(train(m, tr, tr, TrainConfig{}, small_solve()), ShapeError);
}

TEST(Train, RepeatedExplosionsAbort) {
  const Dataset ds = two_bump(32, 1);
  const TaskData tr = classification_data(ds, range(0, 32), PathScheme::linear);
  SdeModel m = make_model(small_model(ModelKind::lnsde, 2, 2));
  SolveConfig s = small_solve();
  s.explosion_threshold = 1e-9;
  TrainConfig cfg;
  cfg.batch_size = 8;
  EXPECT_THROW(train(m, tr, tr, cfg, s), TrainingAborted);
}

TEST(Tasks, ForecastingAndInterpolationTargets) {
  Dataset ds = synth(SynthKind::damped_oscillator, 8, 16, 0.0, 2);
  ds = uniform_scale(ds, 16);
  const TaskData fc = forecasting_data(ds, range(0, 8), 4, PathScheme::linear);
  EXPECT_EQ(fc.target_dim, 4u);
  EXPECT_EQ(fc.targets.size(), 32u);
  EXPECT_DOUBLE_EQ(fc.paths[0].t_end(), ds.samples[0].times[11]);
  const TaskData ip = interpolation_data(ds, range(0, 8), 4, PathScheme::linear);
  EXPECT_EQ(ip.target_dim, 3u);  // points 4, 8, 12
  EXPECT_EQ(ip.targets[0], ds.samples[0].value(4, 0));
  EXPECT_THROW(interpolation_data(ds, range(0, 8), 1, PathScheme::linear), ValidationError);
}

TEST(Tasks, RegressionTrainingReducesMse) {
  Dataset ds = uniform_scale(synth(SynthKind::damped_oscillator, 40, 16, 0.0, 2), 16);
  const TaskData tr = forecasting_data(ds, range(0, 30), 2, PathScheme::natural_cubic);
  const TaskData va = forecasting_data(ds, range(30, 40), 2, PathScheme::natural_cubic);
  SdeModel m = make_model(small_model(ModelKind::lsde, 1, tr.output_dim()));
  TrainConfig cfg;
  cfg.task = Task::forecasting;
  cfg.max_epochs = 15;
  cfg.batch_size = 10;
  const TrainHistory h = train(m, tr, va, cfg, small_solve());
  EXPECT_LT(h.best_val_loss, h.epochs.front().val_loss);
  EXPECT_TRUE(std::isfinite(h.best_val_loss));
}

TEST(History, CsvHeaderAndRows) {
  TrainHistory h;
  h.epochs.push_back({0, 1.5, 1.25, 0.5, 0.1, 0});
  EXPECT_EQ(history_csv(h), "epoch,train_loss,val_loss,val_metric\n0,1.5,1.25,0.5\n");
}

TEST(TaskNames, RoundTrip) {
  for (auto t : {Task::classification, Task::interpolation, Task::forecasting}) EXPECT_EQ(parse_task(to_string(t)), t);
  EXPECT_THROW(parse_task("ranking"), ValidationError);
}
