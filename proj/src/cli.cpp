#include "dynkd/cli.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dynkd/checkpoint.hpp"
#include "dynkd/config.hpp"
#include "dynkd/error.hpp"
#include "dynkd/report.hpp"
#include "dynkd/schedule.hpp"
#include "dynkd/trainer.hpp"

namespace dynkd {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  bool strict = false;
  bool allow_download = false;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool resume = false;
};

std::vector<std::string> effective_overrides(const Options& o) {
  std::vector<std::string> all = o.overrides;
  if (o.allow_download) all.push_back("dataset.allow_download=true");
  if (o.seed) all.push_back(fmt::format("trainer.seed={}", *o.seed));
  return all;
}

ExperimentConfig load_checked(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig c = load_config(o.config, effective_overrides(o));
  if (const auto v = validate(c); !v.empty()) {
    std::string msg = "invalid config " + o.config + ":";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  return c;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return o.out;
}

void print_run(const RunRecord& r, const std::string& label) {
  fmt::print("{}: {} epochs, final test accuracy {:.4f} -> {}\n", label, r.epochs.size(),
             r.final_test_accuracy(), r.run_dir.string());
}

int cmd_validate(const Options& o) {
  const ExperimentConfig c = load_checked(o);
  fmt::print("{}: ok (mode {}, {} -> {}, dataset {})\n", o.config, to_string(c.trainer.mode),
             c.models.teacher, c.models.student, to_string(c.dataset.name));
  return 0;
}

int cmd_train_teacher(const Options& o) {
  const ExperimentConfig c = load_checked(o);
  print_run(train_teacher(c, require_out(o)), "teacher " + c.models.teacher);
  return 0;
}

int cmd_distill(const Options& o) {
  const ExperimentConfig c = load_checked(o);
  print_run(train(c, require_out(o)), to_string(c.trainer.mode) + " " + c.models.student);
  return 0;
}

struct SweepTask {
  ExperimentConfig config;
  fs::path dir;
  std::string label;
};

int cmd_sweep(const Options& o) {
  ExperimentConfig base = load_checked(o);
  if (o.seed) base.sweep.seeds = {*o.seed};
  const fs::path out = require_out(o);
  const std::string ds = to_string(base.dataset.name);

  ExperimentConfig data_cfg = base;
  const Dataset train_set = load_dataset(data_cfg.dataset.spec(Split::train));
  DatasetSpec test_spec = data_cfg.dataset.spec(Split::test);
  test_spec.normalization = train_set.normalization;
  const Dataset test_set = load_dataset(test_spec);

  // One teacher per distinct architecture.
  std::map<std::string, fs::path> teacher_ckpt;
  for (const auto& cell : base.sweep.cells) {
    if (teacher_ckpt.count(cell.teacher)) continue;
    const fs::path dir = out / ds / ("teacher_" + cell.teacher);
    if (!(o.resume && fs::exists(dir / "run.json"))) {
      ExperimentConfig c = base;
      c.models.teacher = cell.teacher;
      c.trainer.epochs = base.sweep.teacher_epochs;
      c.trainer.seed = base.sweep.teacher_seed;
      print_run(train_teacher(c, {&train_set, &test_set, nullptr}, dir), "teacher " + cell.teacher);
    }
    teacher_ckpt[cell.teacher] = dir / "teacher.ckpt";
  }

  std::vector<SweepTask> tasks;
  for (const auto& cell : base.sweep.cells) {
    for (Mode mode : base.sweep.modes) {
      for (std::uint64_t seed : base.sweep.seeds) {
        SweepTask t;
        t.config = base;
        t.config.models.teacher = cell.teacher;
        t.config.models.student = cell.student;
        t.config.models.teacher_checkpoint = teacher_ckpt.at(cell.teacher);
        t.config.trainer.mode = mode;
        t.config.trainer.seed = seed;
        t.dir = out / ds / (cell.teacher + "__" + cell.student) / to_string(mode) /
                fmt::format("seed_{}", seed);
        t.label = fmt::format("{} {}->{} seed {}", to_string(mode), cell.teacher, cell.student,
                              seed);
        if (o.resume && fs::exists(t.dir / "run.json")) continue;
        tasks.push_back(std::move(t));
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr failure;
  auto worker = [&]() {
    // Models cache activations during forward, so every worker owns its teachers.
    std::map<fs::path, LoadedCheckpoint> teachers;
    for (std::size_t i; (i = next++) < tasks.size();) {
      {
        std::lock_guard lock(io);
        if (failure) return;
      }
      try {
        const SweepTask& t = tasks[i];
        auto it = teachers.find(t.config.models.teacher_checkpoint);
        if (it == teachers.end()) {
          it = teachers
                   .emplace(t.config.models.teacher_checkpoint,
                            load_checkpoint(t.config.models.teacher_checkpoint))
                   .first;
        }
        const RunRecord r = train(t.config, {&train_set, &test_set, &it->second.model}, t.dir);
        std::lock_guard lock(io);
        print_run(r, t.label);
      } catch (...) {
        std::lock_guard lock(io);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(o.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  fmt::print("sweep complete: {} runs under {}\n", tasks.size(), (out / ds).string());
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path dir = require_out(o);
  bool strict = o.strict;
  if (!o.config.empty()) strict = strict || load_checked(o).report.strict;
  const auto runs = collect_runs(dir);
  const ComparisonTable table = build_table(runs);
  const ReportResult res = write_report(table, dir);
  std::cout << render_table_markdown(table);
  for (const auto& note : res.notes) fmt::print("note: {}\n", note);
  if (!res.missing.empty()) {
    for (const auto& m : res.missing) fmt::print(stderr, "missing run: {}\n", m);
    if (strict) return 1;
  }
  return 0;
}

int cmd_plot_schedule(const Options& o) {
  const ExperimentConfig c = load_checked(o);
  const fs::path out = require_out(o);
  fs::create_directories(out);
  const GompertzSchedule& s = c.schedule;
  const int epochs = c.trainer.epochs;

  std::ofstream csv(out / "schedule.csv", std::ios::trunc);
  csv << "epoch,t,beta\n";
  for (int e = 1; e <= epochs; ++e) {
    const real t = epoch_time(s, e, epochs);
    csv << fmt::format("{},{:.17g},{:.17g}\n", e, t, beta_at(s, t));
  }

  constexpr int kSamples = 200;
  constexpr real w = 600.0, h = 360.0, left = 60.0, top = 30.0;
  const real t_end = epoch_time(s, epochs, epochs);
  auto px = [&](real t) { return left + w * t / t_end; };
  auto py = [&](real b) { return top + h * (1.0 - b); };
  std::string pts;
  for (int i = 0; i <= kSamples; ++i) {
    const real t = t_end * i / kSamples;
    pts += fmt::format("{}{:.3f},{:.3f}", i ? " " : "", px(t), py(beta_at(s, t)));
  }
  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"700\" height=\"440\" "
         "font-family=\"sans-serif\">\n<rect width=\"700\" height=\"440\" fill=\"white\"/>\n";
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
                     left, top, top + h);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
                     left, top + h, left + w);
  for (real b : {s.beta_min, s.beta_max}) {
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.3f}\" x2=\"{2}\" y2=\"{1:.3f}\" "
                       "stroke=\"#999999\" stroke-dasharray=\"4 4\"/>\n",
                       left, py(b), left + w);
  }
  svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" "
                     "stroke-width=\"2\"/>\n",
                     pts);
  for (int e = 1; e <= epochs; ++e) {
    const real t = epoch_time(s, e, epochs);
    svg += fmt::format("<circle cx=\"{:.3f}\" cy=\"{:.3f}\" r=\"3\" fill=\"#1f77b4\"/>\n", px(t),
                       py(beta_at(s, t)));
  }
  svg += fmt::format("<text x=\"{}\" y=\"425\" text-anchor=\"middle\" font-size=\"13\">t ({})"
                     "</text>\n",
                     left + w / 2, to_string(s.time_unit));
  svg += "<text x=\"15\" y=\"20\" font-size=\"13\">beta</text>\n</svg>\n";
  std::ofstream(out / "schedule.svg", std::ios::trunc) << svg;
  fmt::print("wrote {} and {}\n", (out / "schedule.csv").string(), (out / "schedule.svg").string());
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Knowledge distillation with a Gompertz-scheduled distillation weight", "dynkd"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("-c,--config", o.config, "experiment config (JSON)");
    if (needs_config) opt->required();
    sub->add_option("-s,--set", o.overrides, "override a config value, e.g. trainer.epochs=5");
  };
  auto add_run = [&o](CLI::App* sub) {
    sub->add_option("-o,--out", o.out, "output directory")->required();
    sub->add_option("--seed", o.seed, "override trainer.seed");
    sub->add_flag("--allow-download", o.allow_download,
                  "fetch missing CIFAR archives (needs dataset.archive_sha256)");
  };

  auto* teacher = app.add_subcommand("train-teacher", "train and checkpoint the teacher");
  add_common(teacher, true);
  add_run(teacher);
  auto* distill = app.add_subcommand("distill", "distill one student run");
  add_common(distill, true);
  add_run(distill);
  auto* sweep = app.add_subcommand("sweep", "run every mode x seed x cell of the config");
  add_common(sweep, true);
  add_run(sweep);
  sweep->add_option("-j,--jobs", o.jobs, "runs executed concurrently")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", o.resume, "skip runs whose run.json already exists");
  auto* report = app.add_subcommand("report", "tabulate a sweep directory");
  add_common(report, false);
  report->add_option("-o,--out", o.out, "run-set directory (outputs are written there)")
      ->required();
  report->add_flag("--strict", o.strict, "exit nonzero when any cell is missing");
  auto* plot = app.add_subcommand("plot-schedule", "write the beta schedule as CSV and SVG");
  add_common(plot, true);
  plot->add_option("-o,--out", o.out, "output directory")->required();
  auto* check = app.add_subcommand("validate-config", "parse and validate a config");
  add_common(check, true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (teacher->parsed()) return cmd_train_teacher(o);
    if (distill->parsed()) return cmd_distill(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (report->parsed()) return cmd_report(o);
    if (plot->parsed()) return cmd_plot_schedule(o);
    if (check->parsed()) return cmd_validate(o);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace dynkd
