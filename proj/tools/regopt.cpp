// regopt: dataset synthesis, training, inference, surfaces and comparisons.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "regopt/errors.hpp"
#include "regopt/evaluate.hpp"
#include "regopt/rng.hpp"
#include "regopt/surface.hpp"
#include "regopt/train.hpp"

namespace fs = std::filesystem;
using namespace regopt;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::IoError: return 3;
    case ErrorKind::CheckpointMismatch: return 4;
    case ErrorKind::DegenerateHomography:
    case ErrorKind::PointAtInfinity: return 5;
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidSpec:
    case ErrorKind::EmptyDataset:
    case ErrorKind::EmptyDatabase:
    case ErrorKind::ShapeMismatch: return 2;
    default: return 1;
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) fail(ErrorKind::IoError, "write failed: " + path.string());
}

fs::path sidecar(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

std::vector<int> parse_channels(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidConfig, "channels must be a comma-separated list of integers: " + s);
    }
    if (out.back() < 1) fail(ErrorKind::InvalidConfig, "channel counts must be positive");
  }
  if (out.empty()) fail(ErrorKind::InvalidConfig, "channels list is empty");
  return out;
}

Metric parse_metric_for(const Task& task, const std::string& name) {
  const Metric m = name.empty() ? task.default_metric() : metric_from_string(name);
  const bool lines = task.kind() == TaskKind::Lines;
  if (lines != (m == Metric::Intercept))
    fail(ErrorKind::InvalidConfig, "metric " + std::string(to_string(m)) + " does not apply to " +
                                       std::string(to_string(task.kind())) + " data");
  return m;
}

// ---------------------------------------------------------------------------
// key = value config files. Each key names a long option of the subcommand;
// values are inserted before the command-line flags so flags override them.

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::IoError, "cannot read config " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (int no = 1; std::getline(is, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::InvalidConfig, path.string() + ":" + std::to_string(no) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::string> config_args(const CLI::App& sub, const fs::path& path) {
  std::vector<std::string> args;
  for (const auto& [k, v] : read_config(path)) {
    if (k == "config" || !sub.get_option_no_throw("--" + k))
      fail(ErrorKind::InvalidConfig, path.string() + ": unknown key '" + k + "' for " + sub.get_name());
    args.push_back("--" + k + "=" + v);
  }
  return args;
}

void log_resolved(const CLI::App& sub) {
  std::cerr << "# resolved " << sub.get_name() << " config\n" << sub.config_to_str(true, false);
}

// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string task, out, style = "soccer";
  std::size_t count = 0;
  std::uint64_t seed = 0;
  double noise = 0.05, tint = 0.1;
  bool distractor = true, raw = true;
};

void add_synth(CLI::App& c, SynthOpts& o) {
  c.add_option("--task", o.task, "field or lines")->required()->check(CLI::IsMember({"field", "lines"}));
  c.add_option("--count", o.count, "number of samples")->required();
  c.add_option("--out", o.out, "output directory")->required();
  c.add_option("--seed", o.seed, "generation seed")->capture_default_str();
  c.add_option("--style", o.style, "soccer or hockey (field only)")->capture_default_str();
  c.add_option("--noise", o.noise, "Gaussian noise sigma")->capture_default_str();
  c.add_option("--tint", o.tint, "per-channel tint range (field only)")->capture_default_str();
  c.add_option("--distractor", o.distractor, "draw a distractor ellipse")->capture_default_str();
  c.add_option("--raw", o.raw, "write raw float sidecars")->capture_default_str();
}

int run_synth(const SynthOpts& o, int jobs) {
  Dataset ds;
  if (o.task == "lines") {
    const LineImageConfig cfg{o.noise, o.distractor};
    ds = generate_line_dataset(0, o.seed, cfg);
    ds.samples.resize(o.count);
    parallel_chunks(o.count, 64, jobs, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) ds.samples[i] = gen_line_sample(o.seed, i, cfg);
    });
  } else {
    FieldGenConfig cfg;
    cfg.style = field_style_from_string(o.style);
    cfg.view.noise_sigma = o.noise;
    cfg.view.tint = o.tint;
    cfg.view.distractor = o.distractor;
    ds = generate_field_dataset(0, o.seed, cfg);
    ds.samples.resize(o.count);
    parallel_chunks(o.count, 64, jobs, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) ds.samples[i] = gen_field_sample(*ds.field, o.seed, i, cfg);
    });
  }
  save_dataset(o.out, ds, o.raw);
  std::cerr << "wrote " << o.count << " samples to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string model, data, target, out, reg_out, channels = "16,32,64,64";
  int hidden = 128, batch = 32, steps = 2000, val_every = 500, patience = 10, log_every = 50;
  double lr = 1e-4, val_fraction = 0.2;
  bool online = false, spectral = true, crop = false, flip = false, shadow = false;
  std::size_t val_count = 200;
  std::uint64_t seed = 0;
};

void add_train(CLI::App& c, TrainOpts& o) {
  c.add_option("--model", o.model, "reg, err, ffr or coupled")->required()->check(
      CLI::IsMember({"reg", "err", "ffr", "coupled"}));
  c.add_option("--data", o.data, "dataset directory")->required();
  c.add_option("--out", o.out, "checkpoint path (error model for coupled)")->required();
  c.add_option("--target", o.target, "iou_whole, iou_part, reproj or intercept (default per task)");
  c.add_option("--reg-out", o.reg_out, "registration checkpoint for coupled (default OUT.reg)");
  c.add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  c.add_option("--batch", o.batch, "batch size")->capture_default_str()->check(CLI::PositiveNumber);
  c.add_option("--steps", o.steps, "maximum steps")->capture_default_str()->check(CLI::NonNegativeNumber);
  c.add_option("--val-every", o.val_every, "validation interval")->capture_default_str()->check(CLI::PositiveNumber);
  c.add_option("--patience", o.patience, "validations without improvement before stopping")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c.add_option("--log-every", o.log_every, "log interval")->capture_default_str()->check(CLI::PositiveNumber);
  c.add_option("--val-fraction", o.val_fraction, "held-out fraction of stored samples")->capture_default_str();
  c.add_option("--online", o.online, "train on freshly generated samples")->capture_default_str();
  c.add_option("--val-count", o.val_count, "validation samples when online")->capture_default_str();
  c.add_option("--spectral", o.spectral, "spectral normalization (error models)")->capture_default_str();
  c.add_option("--channels", o.channels, "conv channels, comma-separated")->capture_default_str();
  c.add_option("--hidden", o.hidden, "dense width")->capture_default_str();
  c.add_option("--crop", o.crop, "random crop augmentation")->capture_default_str();
  c.add_option("--flip", o.flip, "horizontal flip augmentation")->capture_default_str();
  c.add_option("--shadow", o.shadow, "shadow augmentation")->capture_default_str();
  c.add_option("--seed", o.seed, "training seed")->capture_default_str();
}

void save_training(const fs::path& ckpt, const Model& m, const std::vector<LogRecord>& log, double secs, int steps) {
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, m);
  std::ofstream os(sidecar(ckpt, ".log.ndjson"));
  if (!os) fail(ErrorKind::IoError, "cannot write training log next to " + ckpt.string());
  write_log(os, log, false);
  write_json(sidecar(ckpt, ".timing.json"), {{"seconds", secs}, {"steps", steps}, {"steps_per_second", steps / secs}});
}

int run_train(const TrainOpts& o) {
  const Dataset ds = load_dataset(o.data);
  const std::unique_ptr<Task> task = make_task(ds);
  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.batch_size = o.batch;
  cfg.max_steps = o.steps;
  cfg.val_every = o.val_every;
  cfg.patience = o.patience;
  cfg.log_every = o.log_every;
  cfg.augment = {o.crop, o.flip, o.shadow};
  cfg.target = parse_metric_for(*task, o.target);
  cfg.seed = o.seed;
  const Arch arch{parse_channels(o.channels), o.hidden};

  TrainData data;
  if (o.online) {
    const std::uint64_t gen_seed = mix64(o.seed ^ hash_name("online"));
    data = online_data(*task, sample_generator(ds, gen_seed), o.val_count);
  } else {
    if (ds.samples.empty()) fail(ErrorKind::EmptyDataset, "dataset " + o.data + " has no samples");
    data = stored_data(*task, ds.samples, o.val_fraction, o.seed);
  }
  const auto t0 = Clock::now();
  auto report = [](const std::vector<LogRecord>& log) {
    for (const LogRecord& r : log) {
      std::cerr << "step " << r.step << " train " << r.train_loss;
      if (r.val_loss) std::cerr << " val " << *r.val_loss;
      std::cerr << "\n";
    }
  };
  if (o.model == "coupled") {
    const CoupledResult r = train_coupled(data, cfg, arch, o.spectral);
    report(r.err.log);
    const double secs = seconds_since(t0);
    save_training(o.out, r.err.model, r.err.log, secs, r.err.log.empty() ? 0 : r.err.log.back().step);
    save_training(o.reg_out.empty() ? o.out + ".reg" : o.reg_out, r.reg.model, r.reg.log, secs,
                  r.reg.log.empty() ? 0 : r.reg.log.back().step);
    return 0;
  }
  TrainResult r;
  if (o.model == "reg") r = train_reg(data, cfg, arch);
  if (o.model == "err") r = train_err(data, cfg, arch, o.spectral);
  if (o.model == "ffr") r = train_ffr(data, cfg, arch);
  report(r.log);
  save_training(o.out, r.model, r.log, seconds_since(t0), r.log.empty() ? 0 : r.log.back().step);
  return 0;
}

// ---------------------------------------------------------------------------

struct InferOpts {
  std::string reg, err, ffr, data, database, mode = "full", report;
  int iters = 400, batch = 64;
  double lr = 1e-3;
  std::size_t limit = 0, database_size = 0;
  std::uint64_t seed = 0;
};

void add_infer(CLI::App& c, InferOpts& o, bool report_required) {
  c.add_option("--reg", o.reg, "registration checkpoint");
  c.add_option("--err", o.err, "error checkpoint");
  c.add_option("--ffr", o.ffr, "refinement checkpoint");
  c.add_option("--data", o.data, "evaluation dataset")->required();
  c.add_option("--database", o.database, "dataset whose labels form the nn/nno database");
  c.add_option("--database-size", o.database_size, "use the first N database entries (0 = all)")->capture_default_str();
  c.add_option("--mode", o.mode, "full, sff, ffr, nn or nno")->capture_default_str()->check(
      CLI::IsMember({"full", "sff", "ffr", "nn", "nno"}));
  c.add_option("--iters", o.iters, "optimizer iterations")->capture_default_str()->check(CLI::NonNegativeNumber);
  c.add_option("--lr", o.lr, "optimizer learning rate")->capture_default_str();
  c.add_option("--batch", o.batch, "images per tape")->capture_default_str()->check(CLI::PositiveNumber);
  c.add_option("--limit", o.limit, "evaluate the first N samples (0 = all)")->capture_default_str();
  c.add_option("--seed", o.seed, "run seed (recorded)")->capture_default_str();
  auto* rep = c.add_option("--report", o.report, "report JSON path");
  if (report_required) rep->required();
}

struct InferRun {
  json report;
  double seconds = 0.0;
  long iterations = 0;
  double optimizer_seconds = 0.0;
};

std::vector<Sample> first_n(std::vector<Sample> s, std::size_t n) {
  if (n > 0 && s.size() > n) s.resize(n);
  return s;
}

InferRun run_infer_core(const InferOpts& o, int jobs) {
  const auto t0 = Clock::now();
  const InferMode mode = infer_mode_from_string(o.mode);
  const Dataset ds = load_dataset(o.data);
  const std::unique_ptr<Task> task = make_task(ds);
  const std::vector<Sample> samples = first_n(ds.samples, o.limit);
  if (samples.empty()) fail(ErrorKind::EmptyDataset, "dataset " + o.data + " has no samples");

  std::optional<Model> reg, err, ffr;
  const int c = task->channels(), d = task->dim();
  auto load = [&](std::optional<Model>& m, const std::string& path, int in, int outs, const char* what) {
    if (path.empty()) return;
    m = load_checkpoint(path);
    check_compatible(*task, *m, in, outs, what);
  };
  load(reg, o.reg, c, d, "registration");
  load(err, o.err, 2 * c, 1, "error");
  load(ffr, o.ffr, 2 * c, d, "refinement");
  std::vector<Params> database;
  if (!o.database.empty()) {
    const Dataset db = load_dataset(o.database);
    if (db.kind != ds.kind) fail(ErrorKind::InvalidConfig, "database task differs from the evaluation data");
    for (const Sample& s : first_n(db.samples, o.database_size)) database.push_back(s.params);
  }
  EvalModels models{reg ? &*reg : nullptr, err ? &*err : nullptr, ffr ? &*ffr : nullptr,
                    o.database.empty() ? nullptr : &database};
  OptimOptions opts;
  opts.max_iters = o.iters;
  opts.lr = o.lr;
  opts.batch = o.batch;
  opts.jobs = jobs;
  const EvalResult r = evaluate(*task, mode, models, samples, opts);

  InferRun run;
  run.report = report_json(*task, mode, r, samples);
  run.report["config"] = {{"mode", o.mode},   {"iters", o.iters}, {"lr", o.lr},     {"reg", o.reg},
                          {"err", o.err},     {"ffr", o.ffr},     {"data", o.data}, {"database", o.database},
                          {"database_size", o.database_size},     {"limit", o.limit}, {"seed", o.seed}};
  run.iterations = r.optimizer_iterations;
  run.optimizer_seconds = r.optimizer_seconds;
  run.seconds = seconds_since(t0);
  if (const int n = run.report["degenerate"].get<int>(); n > 0)
    std::cerr << "warning: " << n << " optimizations stopped at a degenerate iterate\n";
  return run;
}

json timing_json(const InferRun& r) {
  return {{"seconds", r.seconds},
          {"optimizer_seconds", r.optimizer_seconds},
          {"optimizer_iterations", r.iterations},
          {"iterations_per_second", r.optimizer_seconds > 0 ? r.iterations / r.optimizer_seconds : 0.0}};
}

int run_infer(const InferOpts& o, int jobs) {
  const InferRun r = run_infer_core(o, jobs);
  write_json(o.report, r.report);
  write_json(sidecar(o.report, ".timing.json"), timing_json(r));
  for (const auto& [name, v] : r.report["metrics"].items())
    std::cerr << name << ": mean " << v["mean"].get<double>() << " median " << v["median"].get<double>() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SurfaceOpts {
  std::string err, data, out, metric;
  int res = 50, batch = 64;
  double range = 0.5;
  std::size_t limit = 20;
  bool per_image = true;
};

void add_surface(CLI::App& c, SurfaceOpts& o) {
  c.add_option("--err", o.err, "error checkpoint")->required();
  c.add_option("--data", o.data, "dataset directory")->required();
  c.add_option("--out", o.out, "output directory")->required();
  c.add_option("--res", o.res, "grid resolution")->capture_default_str()->check(CLI::PositiveNumber);
  c.add_option("--range", o.range, "half-width of the translation grid")->capture_default_str();
  c.add_option("--metric", o.metric, "metric for the true surface (default per task)");
  c.add_option("--limit", o.limit, "first N samples (0 = all)")->capture_default_str();
  c.add_option("--per-image", o.per_image, "write per-image surfaces")->capture_default_str();
  c.add_option("--batch", o.batch, "hypotheses per tape")->capture_default_str()->check(CLI::PositiveNumber);
}

int run_surface(const SurfaceOpts& o, int jobs) {
  const Dataset ds = load_dataset(o.data);
  const std::unique_ptr<Task> task = make_task(ds);
  const std::vector<Sample> samples = first_n(ds.samples, o.limit);
  if (samples.empty()) fail(ErrorKind::EmptyDataset, "dataset " + o.data + " has no samples");
  const Model err = load_checkpoint(o.err);
  check_compatible(*task, err, 2 * task->channels(), 1, "error");
  const Metric metric = parse_metric_for(*task, o.metric);
  const GridConfig grid{o.res, o.range};
  std::vector<SurfaceGrid> pred, truth;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    pred.push_back(predicted_surface(*task, err, samples[i].image, samples[i].params, grid, o.batch, jobs));
    truth.push_back(true_surface(*task, metric, samples[i].params, grid));
    if (o.per_image) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "%06zu", i);
      write_surface(o.out, std::string("predicted_") + stem, pred.back());
      write_surface(o.out, std::string("true_") + stem, truth.back());
    }
  }
  const SurfaceGrid mp = mean_surface(pred), mt = mean_surface(truth);
  write_surface(o.out, "predicted_mean", mp);
  write_surface(o.out, "true_mean", mt);
  const SurfaceArgmin a = mp.argmin();
  std::cerr << "mean predicted surface argmin (" << a.tx << ", " << a.ty << "), distance "
            << std::hypot(a.tx, a.ty) << " from the origin\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareOpts {
  std::vector<std::string> configs;
  std::string out;
};

double round6(double x) { return std::round(x * 1e6) / 1e6; }

int run_compare(const CompareOpts& o, int jobs) {
  std::vector<std::pair<std::string, InferOpts>> variants;
  std::vector<std::string> missing;
  for (const std::string& path : o.configs) {
    if (!fs::exists(path)) {
      missing.push_back(path);
      continue;
    }
    CLI::App app;
    InferOpts io;
    add_infer(app, io, false);
    std::vector<std::string> args = config_args(app, path);
    std::reverse(args.begin(), args.end());  // CLI11 consumes vectors from the back
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      fail(ErrorKind::InvalidConfig, path + ": " + e.what());
    }
    for (const std::string* p : {&io.reg, &io.err, &io.ffr, &io.data, &io.database})
      if (!p->empty() && !fs::exists(*p)) missing.push_back(*p);
    variants.emplace_back(fs::path(path).stem().string(), io);
  }
  if (!missing.empty()) {
    std::cerr << "missing artifacts:\n";
    for (const std::string& m : missing) std::cerr << "  " << m << "\n";
    return 3;
  }
  json table = json::array(), timing = json::object();
  std::vector<std::string> metric_names;
  for (const auto& [name, io] : variants) {
    const InferRun r = run_infer_core(io, jobs);
    json row = {{"variant", name}, {"mode", io.mode}, {"count", r.report["count"]}};
    for (const auto& [m, v] : r.report["metrics"].items()) {
      row[m] = {{"mean", round6(v["mean"].get<double>())}, {"median", round6(v["median"].get<double>())}};
      if (std::find(metric_names.begin(), metric_names.end(), m) == metric_names.end()) metric_names.push_back(m);
    }
    table.push_back(row);
    timing[name] = timing_json(r);
  }
  std::ostringstream md;
  md << "| variant | mode | n |";
  for (const std::string& m : metric_names) md << ' ' << m << " mean | " << m << " median |";
  md << "\n|---|---|---|";
  for (std::size_t i = 0; i < metric_names.size(); ++i) md << "---|---|";
  md << "\n";
  char buf[64];
  for (const json& row : table) {
    md << "| " << row["variant"].get<std::string>() << " | " << row["mode"].get<std::string>() << " | "
       << row["count"].get<std::size_t>() << " |";
    for (const std::string& m : metric_names) {
      if (!row.contains(m)) {
        md << " - | - |";
        continue;
      }
      std::snprintf(buf, sizeof buf, " %.6f | %.6f |", row[m]["mean"].get<double>(), row[m]["median"].get<double>());
      md << buf;
    }
    md << "\n";
  }
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) fail(ErrorKind::IoError, "cannot write " + o.out);
  os << md.str();
  fs::path json_path = out;
  json_path.replace_extension(".json");
  write_json(json_path, {{"version", 1}, {"variants", table}});
  write_json(sidecar(out, ".timing.json"), timing);
  std::cout << md.str();
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Homography registration by optimizing a learned error"};
  app.require_subcommand(1);
  app.fallthrough();
  int jobs = 1;
  app.add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  SynthOpts so;
  TrainOpts to;
  InferOpts io;
  SurfaceOpts su;
  CompareOpts co;
  std::string config;
  std::vector<CLI::App*> subs;
  auto sub = [&](const char* name, const char* desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->add_option("--config", config, "key = value file; flags override it");
    subs.push_back(s);
    return s;
  };
  add_synth(*sub("synth", "generate a dataset"), so);
  add_train(*sub("train", "train a model"), to);
  add_infer(*sub("infer", "register a dataset and report metrics"), io, true);
  add_surface(*sub("surface", "export predicted and true error surfaces"), su);
  CLI::App* cmp = sub("compare", "run several infer configs and tabulate them");
  cmp->add_option("--configs", co.configs, "infer config files, one variant each")->required();
  cmp->add_option("--out", co.out, "markdown report (JSON alongside)")->required();
  for (CLI::App* s : subs)
    for (CLI::Option* opt : s->get_options()) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  cmp->get_option("--configs")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  // Splice config-file values in ahead of the command-line flags.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    if (path.empty()) continue;
    const CLI::App* target = nullptr;
    for (const CLI::App* s : subs)
      if (std::find(args.begin(), args.begin() + i, s->get_name()) != args.begin() + i) target = s;
    if (!target) fail(ErrorKind::InvalidConfig, "--config must follow a command");
    const auto pos = std::find(args.begin(), args.end(), target->get_name()) + 1;
    const std::vector<std::string> extra = config_args(*target, path);
    args.insert(pos, extra.begin(), extra.end());
    break;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (const CLI::App* s : subs)
    if (s->parsed()) log_resolved(*s);

  if (app.got_subcommand("synth")) return run_synth(so, jobs);
  if (app.got_subcommand("train")) return run_train(to);
  if (app.got_subcommand("infer")) return run_infer(io, jobs);
  if (app.got_subcommand("surface")) return run_surface(su, jobs);
  return run_compare(co, jobs);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
