// nsde: data preparation, training, evaluation and the stability experiments.
//
//   nsde <command> [--config PATH] [--seed N] [--out DIR] [--threads N] [--section.key=value ...]
//
// Exit codes: 0 success, 1 invalid input or config, 2 numerical abort.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "nsde/nsde.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsde;

namespace {

constexpr int kOk = 0, kInvalid = 1, kNumerical = 2;

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::string checkpoint;
  std::string input;
  std::string split = "test";
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + p.string());
  f << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::string fmt(double v) { return detail::format_double(v); }

Config resolve(const Args& a, const std::vector<std::string>& extras, json& patch) {
  patch = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ValidationError("cannot read config " + a.config);
    patch = json::parse(in, nullptr, false);
    if (patch.is_discarded()) throw ValidationError(a.config + " is not valid JSON");
  }
  for (const auto& e : extras) {
    if (e.rfind("--", 0) != 0 || e.find('=') == std::string::npos) {
      throw ValidationError("unexpected argument '" + e + "' (overrides look like --section.key=value)");
    }
    apply_override(patch, e.substr(2));
  }
  if (a.seed) patch["seed"] = *a.seed;
  if (a.out) patch["out"] = *a.out;
  if (a.threads) patch["threads"] = *a.threads;
  return config_from_json(patch);
}

json base_report(const std::string& command, const Config& c) {
  return {{"command", command}, {"config", to_json(c)}, {"seeds", {{"root", c.seed}}}};
}

fs::path out_dir(const Config& c) {
  fs::path p(c.out);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Config& c) {
  const Dataset ds = synth(c.data.synth, c.data.n_samples, c.data.length, c.data.noise, c.data.seed);
  const fs::path dir = out_dir(c);
  save_csv(ds, dir / "data.csv");
  json rep = base_report("synth", c);
  rep["seeds"]["data"] = c.data.seed;
  rep["data_hash"] = dataset_hash(ds);
  rep["files"] = {"data.csv", labels_path_for(dir / "data.csv").filename().string()};
  write_json(dir / "report.json", rep);
  std::cout << "wrote " << (dir / "data.csv").string() << " (" << ds.size() << " series, hash " << dataset_hash(ds) << ")\n";
  return kOk;
}

int cmd_corrupt(const Config& c, const Args& a) {
  if (a.input.empty()) throw ValidationError("corrupt needs --input CSV");
  const Dataset raw = load_csv(a.input);
  const RunSeeds seeds(c.seed);
  Dataset out = inject_missing(raw, c.run.prep.missing_rate, seeds.missing);
  ScaleReport sr;
  if (c.run.prep.scale) out = uniform_scale(out, c.run.prep.target_len, &sr);
  const fs::path dir = out_dir(c);
  if (fs::exists(dir / "corrupted.csv") && fs::equivalent(dir / "corrupted.csv", a.input)) {
    throw ValidationError("corrupt would overwrite its input");
  }
  save_csv(out, dir / "corrupted.csv");
  json rep = base_report("corrupt", c);
  rep["seeds"]["missing"] = seeds.missing;
  rep["input"] = a.input;
  rep["data_hash"] = dataset_hash(raw);
  rep["output_hash"] = dataset_hash(out);
  rep["missing_rate"] = c.run.prep.missing_rate;
  write_json(dir / "report.json", rep);
  std::cout << "wrote " << (dir / "corrupted.csv").string() << "\n";
  return kOk;
}

int cmd_train(const Config& c) {
  const Dataset raw = load_data(c.data);
  const auto t0 = std::chrono::steady_clock::now();
  const RunResult r = run_experiment(raw, c.run);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir = out_dir(c);
  const json cfg = to_json(c);
  save_checkpoint(dir / "checkpoint.json", r.model, cfg, r.prepared.stats);
  write_text(dir / "history.csv", history_csv(r.history));

  json metrics = {{"command", "train"},
                  {"data_hash", dataset_hash(raw)},
                  {"val", to_json(r.val)},
                  {"test", to_json(r.test)},
                  {"best_epoch", r.history.best_epoch},
                  {"epochs_run", r.history.epochs.size()},
                  {"stopped_early", r.history.stopped_early},
                  {"aborted", r.aborted}};
  write_json(dir / "metrics.json", metrics);

  json rep = base_report("train", c);
  rep["seeds"] = to_json(RunSeeds(c.seed));
  rep["seeds"]["root"] = c.seed;
  rep["data_hash"] = dataset_hash(raw);
  rep["metrics"] = metrics;
  rep["split"] = {{"train", r.split.train.size()}, {"val", r.split.val.size()}, {"test", r.split.test.size()}};
  rep["preparation"] = r.prepared.manifest;
  rep["warnings"] = r.history.warnings;
  rep["abort_reason"] = r.abort_reason;
  rep["seconds"] = seconds;
  rep["files"] = {"checkpoint.json", "history.csv", "metrics.json"};
  write_json(dir / "report.json", rep);
  std::cout << "test " << (r.test.task == Task::classification ? "accuracy " : "mse ") << fmt(r.test.metric())
            << " (best epoch " << r.history.best_epoch << ")\n";
  if (r.aborted) {
    std::cerr << "training aborted: " << r.abort_reason << "\n";
    return kNumerical;
  }
  return kOk;
}

int cmd_eval(const Config& cli, const Args& a) {
  const fs::path ckpt_path = a.checkpoint.empty() ? fs::path(cli.out) / "checkpoint.json" : fs::path(a.checkpoint);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  // The checkpoint's run settings; data location may be overridden on the command line.
  Config c = config_from_json(ck.config);
  c.data = cli.data;
  c.out = cli.out;
  const Dataset raw = load_data(c.data);
  const RunSeeds seeds(c.seed);
  TrainConfig tc = c.run.train;
  tc.split_seed = seeds.split;
  tc.seed = seeds.train;
  const Split sp = split(raw, tc);
  std::vector<std::size_t> idx;
  if (a.split == "test") idx = sp.test;
  else if (a.split == "val") idx = sp.val;
  else if (a.split == "train") idx = sp.train;
  else if (a.split == "all") {
    idx.resize(raw.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    throw ValidationError("--split must be train, val, test or all");
  }
  PrepConfig pc = c.run.prep;
  pc.missing_seed = seeds.missing;
  pc.normalize = false;
  Dataset ds = prepare(raw, pc, sp.train).data;
  if (c.run.prep.normalize) ds = normalize(ds, ck.stats);
  const TaskData td = task_data(ds, idx, c.run.train.task, c.run.train.path_scheme, c.run.task_param);
  if (td.output_dim() != ck.model.config.output_dim) throw ShapeError("data does not match the checkpoint's output size");
  const std::uint64_t es = evaluation_seed(tc);
  const Metrics m = evaluate(ck.model, td, c.run.solve, c.run.train.eval_mc, a.split == "val" ? es : derive_seed(es, {0x7e}));

  const fs::path dir = out_dir(c);
  json metrics = {{"command", "eval"}, {"split", a.split}, {"data_hash", dataset_hash(raw)}, {"metrics", to_json(m)}};
  write_json(dir / "eval_metrics.json", metrics);
  json rep = base_report("eval", c);
  rep["seeds"] = to_json(seeds);
  rep["seeds"]["root"] = c.seed;
  rep["checkpoint"] = ckpt_path.string();
  rep["data_hash"] = dataset_hash(raw);
  rep["metrics"] = metrics;
  write_json(dir / "eval_report.json", rep);
  std::cout << a.split << " " << (m.task == Task::classification ? "accuracy " : "mse ") << fmt(m.metric()) << "\n";
  return kOk;
}

int cmd_stability(const Config& c) {
  const fs::path dir = out_dir(c);
  bool ok = true;
  const auto pos = check_positivity_and_absorption(positivity_config(c));
  std::cout << (pos.pass() ? "PASS" : "FAIL") << " positivity/absorption over " << pos.n_models << " models x "
            << pos.n_paths << " paths (min state " << fmt(pos.min_state) << ")\n";
  ok = ok && pos.pass();
  json moments = json::array();
  const auto cfgs = moment_configs(c);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto& mc = cfgs[i];
    const auto rep = check_moment_bound(mc);
    std::string csv = "t,moment,se,bound\n";
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
      csv += fmt(rep.times[k]) + "," + fmt(rep.moments[k]) + "," + fmt(rep.ses[k]) + "," + fmt(rep.bound) + "\n";
    }
    const std::string name = "moment_" + std::to_string(i) + ".csv";
    write_text(dir / name, csv);
    json j = to_json(rep);
    j["case"] = {{"m", mc.m}, {"b", mc.b}, {"sigma", mc.sigma}, {"d", mc.d}};
    j["seed"] = mc.seed;
    j["file"] = name;
    moments.push_back(j);
    std::cout << (rep.pass ? "PASS" : "FAIL") << " moment bound m=" << mc.m << " b=" << mc.b << " sigma=" << mc.sigma
              << " d=" << mc.d << ": sup " << fmt(rep.sup_moment) << " <= " << fmt(rep.bound) << " + 3 SE\n";
    ok = ok && rep.pass;
  }
  json rep = base_report("stability", c);
  rep["data_hash"] = nullptr;
  rep["positivity"] = to_json(pos);
  rep["moment_bound"] = moments;
  rep["pass"] = ok;
  write_json(dir / "report.json", rep);
  write_json(dir / "metrics.json", {{"command", "stability"}, {"pass", ok}, {"positivity", to_json(pos)}, {"moment_bound", moments}});
  return kOk;
}

int cmd_robustness(const Config& c) {
  const Dataset ds = load_data(c.data);
  const fs::path dir = out_dir(c);
  json curves = json::array();
  for (const auto& kname : c.robustness.kinds) {
    const ModelKind kind = parse_model_kind(kname);
    for (auto s : seed_list(c.seed, c.robustness.n_seeds)) {
      const auto rc = robustness_config(c, kind, s, ds.n_channels, std::max<std::size_t>(ds.n_classes, 1));
      const auto curve = robustness_curve(ds, rc);
      const std::string name = "robustness_" + kname + "_seed" + std::to_string(s) + ".csv";
      write_text(dir / name, robustness_csv(curve));
      json j = to_json(curve);
      j["seed"] = s;
      j["file"] = name;
      curves.push_back(j);
      std::cout << kname << " seed " << s << ": spearman " << fmt(curve.spearman) << "\n";
    }
  }
  json rep = base_report("robustness", c);
  rep["data_hash"] = dataset_hash(ds);
  rep["curves"] = curves;
  write_json(dir / "report.json", rep);
  write_json(dir / "metrics.json", {{"command", "robustness"}, {"curves", curves}});
  return kOk;
}

int cmd_diffusion(const Config& c) {
  const Dataset ds = load_data(c.data);
  const RunConfig rc = diffusion_run_config(c, ds);
  const auto d = diffusion_comparison(ds, rc);
  const fs::path dir = out_dir(c);
  json variants = to_json(d);
  for (std::size_t i = 0; i < d.variants.size(); ++i) {
    const auto& v = d.variants[i];
    const std::string name = "diffusion_" + v.name + ".csv";
    write_text(dir / name, variant_csv(v));
    variants[i]["file"] = name;
    std::cout << v.name << ": " << (v.aborted ? "aborted" : "final test loss " + fmt(v.final_test_loss))
              << (v.worst ? " (worst)" : "") << "\n";
  }
  json rep = base_report("diffusion-compare", c);
  rep["seeds"] = to_json(RunSeeds(c.seed));
  rep["seeds"]["root"] = c.seed;
  rep["data_hash"] = dataset_hash(ds);
  rep["resolved_run"] = {{"horizon", rc.solve.horizon},
                         {"n_steps", rc.solve.n_steps},
                         {"time_scale", rc.prep.time_scale},
                         {"missing_rate", rc.prep.missing_rate},
                         {"epochs", rc.train.max_epochs}};
  rep["variants"] = variants;
  write_json(dir / "report.json", rep);
  write_json(dir / "metrics.json", {{"command", "diffusion-compare"}, {"variants", variants}});
  return kOk;
}

int cmd_convergence(const Config& c) {
  const GbmParams p = convergence_params(c);
  const fs::path dir = out_dir(c);
  std::string csv = "scheme,dt,error\n";
  json slopes = json::object();
  for (auto scheme : {SolverScheme::euler, SolverScheme::milstein}) {
    const auto r = strong_error(scheme, p, c.convergence.levels, c.convergence.n_paths, derive_seed(c.seed, {0xc0}));
    for (std::size_t i = 0; i < r.dts.size(); ++i) csv += to_string(scheme) + "," + fmt(r.dts[i]) + "," + fmt(r.errors[i]) + "\n";
    slopes[to_string(scheme)] = r.slope;
    std::cout << to_string(scheme) << " slope " << fmt(r.slope) << "\n";
  }
  write_text(dir / "convergence.csv", csv);
  json rep = base_report("convergence", c);
  rep["data_hash"] = nullptr;
  rep["slopes"] = slopes;
  write_json(dir / "report.json", rep);
  write_json(dir / "metrics.json", {{"command", "convergence"}, {"slopes", slopes}});
  return kOk;
}

int cmd_gradcheck(const Config& c) {
  const auto r = gradcheck_suite(c.seed);
  const fs::path dir = out_dir(c);
  json rep = base_report("gradcheck", c);
  rep["data_hash"] = nullptr;
  rep["errors"] = r.errors;
  rep["max_relative_error"] = r.max_error;
  rep["pass"] = r.max_error < 1e-4;
  write_json(dir / "report.json", rep);
  std::printf("max relative error: %.3e\n", r.max_error);
  return r.max_error < 1e-4 ? kOk : kNumerical;
}

int cmd_sweep(const Config& c) {
  const Dataset ds = load_data(c.data);
  const auto seeds = seed_list(c.seed, c.sweep.n_seeds);
  const auto s = missing_rate_sweep(ds, c.run, c.sweep.rates, seeds);
  const fs::path dir = out_dir(c);
  std::string csv = "rate,seed,accuracy\n";
  for (const auto& cell : s.cells) csv += fmt(cell.rate) + "," + std::to_string(cell.seed) + "," + fmt(cell.test.accuracy) + "\n";
  write_text(dir / "sweep.csv", csv);
  for (const auto& row : s.rows) std::cout << "rate " << row.rate << ": accuracy " << fmt(row.mean) << " +- " << fmt(row.sd) << "\n";
  json rep = base_report("sweep", c);
  rep["data_hash"] = dataset_hash(ds);
  rep["seeds"]["runs"] = seeds;
  rep["sweep"] = to_json(s);
  write_json(dir / "report.json", rep);
  write_json(dir / "metrics.json", {{"command", "sweep"}, {"sweep", to_json(s)}});
  return kOk;
}

int cmd_ablation(const Config& c) {
  const Dataset ds = load_data(c.data);
  const auto seeds = seed_list(c.seed, c.sweep.n_seeds);
  const auto r = control_ablation(ds, c.run, c.sweep.ablation_rate, seeds);
  auto row = [](const SweepRow& x) { return json{{"accuracy", x.accuracy}, {"mean", x.mean}, {"sd", x.sd}}; };
  json res = {{"rate", c.sweep.ablation_rate}, {"with_control", row(r.with_control)},
              {"without_control", row(r.without_control)}, {"gap", r.gap()}};
  const fs::path dir = out_dir(c);
  json rep = base_report("ablation", c);
  rep["data_hash"] = dataset_hash(ds);
  rep["seeds"]["runs"] = seeds;
  rep["ablation"] = res;
  write_json(dir / "report.json", rep);
  write_json(dir / "metrics.json", {{"command", "ablation"}, {"ablation", res}});
  std::cout << "with control " << fmt(r.with_control.mean) << ", without " << fmt(r.without_control.mean) << "\n";
  return kOk;
}

int cmd_timing(const Config& c) {
  const Dataset ds = load_data(c.data);
  const auto t = solver_timing(ds, c.run, c.sweep.timing_epochs);
  const fs::path dir = out_dir(c);
  json rep = base_report("timing", c);
  rep["data_hash"] = dataset_hash(ds);
  rep["median_epoch_seconds"] = {{"euler", t.euler_seconds}, {"milstein", t.milstein_seconds}};
  rep["epochs"] = t.epochs;
  write_json(dir / "report.json", rep);
  std::cout << "euler " << fmt(t.euler_seconds) << " s/epoch, milstein " << fmt(t.milstein_seconds) << " s/epoch\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural SDE training and stability experiments"};
  app.require_subcommand(1);
  Args a;
  struct Cmd {
    std::string name, help;
  };
  const std::vector<Cmd> cmds = {
      {"synth", "write a synthetic dataset"},
      {"corrupt", "drop observations from a CSV dataset"},
      {"train", "train a model, evaluate it and save a checkpoint"},
      {"eval", "evaluate a checkpoint"},
      {"stability", "positivity, absorption and second-moment checks"},
      {"robustness", "distance between clean and perturbed readouts versus depth"},
      {"diffusion-compare", "train the six diffusion designs side by side"},
      {"convergence", "strong error of Euler and Milstein on geometric Brownian motion"},
      {"gradcheck", "backprop against finite differences"},
      {"sweep", "test accuracy across missing rates"},
      {"ablation", "the drift with and without the controlled path"},
      {"timing", "seconds per epoch, Euler against Milstein"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cmds) {
    auto* s = app.add_subcommand(c.name, c.help);
    s->allow_extras();
    s->add_option("--config", a.config, "config JSON");
    s->add_option("--seed", a.seed, "root seed");
    s->add_option("--out", a.out, "output directory");
    s->add_option("--threads", a.threads, "worker cap");
    if (c.name == "eval") {
      s->add_option("--checkpoint", a.checkpoint, "checkpoint file (default <out>/checkpoint.json)");
      s->add_option("--split", a.split, "train, val, test or all");
    }
    if (c.name == "corrupt") s->add_option("--input", a.input, "input CSV")->required();
    subs[c.name] = s;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }
  try {
    std::string name;
    std::vector<std::string> extras;
    for (auto& [n, s] : subs) {
      if (s->parsed()) {
        name = n;
        extras = s->remaining();
      }
    }
    json patch;
    const Config c = resolve(a, extras, patch);
    if (name == "synth") return cmd_synth(c);
    if (name == "corrupt") return cmd_corrupt(c, a);
    if (name == "train") return cmd_train(c);
    if (name == "eval") return cmd_eval(c, a);
    if (name == "stability") return cmd_stability(c);
    if (name == "robustness") return cmd_robustness(c);
    if (name == "diffusion-compare") return cmd_diffusion(c);
    if (name == "convergence") return cmd_convergence(c);
    if (name == "gradcheck") return cmd_gradcheck(c);
    if (name == "sweep") return cmd_sweep(c);
    if (name == "ablation") return cmd_ablation(c);
    if (name == "timing") return cmd_timing(c);
    throw ValidationError("unknown command " + name);
  } catch (const NumericalExplosion& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const TrainingAborted& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const AbortNonFinite& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
}
