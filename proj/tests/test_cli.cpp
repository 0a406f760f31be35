#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "dynkd/cli.hpp"
#include "dynkd/schedule.hpp"
#include "support.hpp"

using namespace dynkd;
using dynkd::testing::temp_dir;

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string err;
};

// Runs the CLI with stderr redirected into a file.
Outcome run(const std::vector<std::string>& args, const fs::path& scratch) {
  const fs::path log = scratch / "stderr.txt";
  std::fflush(stderr);
  const int saved = ::dup(2);
  FILE* f = std::fopen(log.c_str(), "w");
  ::dup2(::fileno(f), 2);
  const int code = run_cli(args);
  std::fflush(stderr);
  ::dup2(saved, 2);
  ::close(saved);
  std::fclose(f);
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {code, ss.str()};
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

constexpr const char* kTiny = R"({
  "dataset": {"name": "synthetic", "synthetic": {"num_classes": 3, "samples_per_class": 16,
                                                "test_samples_per_class": 8}},
  "schedule": {"beta_min": 0.1, "beta_max": 1.0, "growth_rate_b": 5.0, "time_shift_t0": 0.5,
               "time_unit": "normalized_fraction"},
  "trainer": {"epochs": 2, "batch_size": 16},
  "sweep": {"seeds": [1], "teacher_epochs": 1}
})";

}  // namespace

TEST_CASE("validate-config accepts a good file and rejects beta_min > beta_max") {
  const fs::path dir = temp_dir("cli_validate");
  const fs::path cfg = write_config(dir, kTiny);
  CHECK(run({"validate-config", "-c", cfg.string()}, dir).code == 0);
  const Outcome bad = run({"validate-config", "-c", cfg.string(), "-s", "schedule.beta_min=2"}, dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("beta_min < beta_max") != std::string::npos);
  const Outcome unknown = run({"validate-config", "-c", cfg.string(), "-s", "trainer.x=1"}, dir);
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("trainer.x: unknown field") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit 2") {
  const fs::path dir = temp_dir("cli_usage");
  CHECK(run({}, dir).code == 2);
  CHECK(run({"frobnicate"}, dir).code == 2);
  CHECK(run({"distill", "-o", dir.string()}, dir).code == 2);
  CHECK(run({"validate-config", "-c", (dir / "missing.json").string()}, dir).code == 2);
  CHECK(run({"sweep", "-c", "x", "-o", "y", "--jobs", "0"}, dir).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("plot-schedule writes the closed form") {
  const fs::path dir = temp_dir("cli_plot");
  const fs::path cfg = write_config(dir, kTiny);
  REQUIRE(run({"plot-schedule", "-c", cfg.string(), "-o", (dir / "plot").string(), "-s",
               "trainer.epochs=40"},
              dir)
              .code == 0);
  std::ifstream in(dir / "plot" / "schedule.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,t,beta");
  int rows = 0;
  while (std::getline(in, line)) {
    int epoch = 0;
    double t = 0, beta = 0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &epoch, &t, &beta) == 3);
    const double tt = epoch / 40.0;
    CHECK(t == doctest::Approx(tt).epsilon(1e-12));
    CHECK(std::abs(beta - (0.1 + 0.9 * std::exp(-std::exp(-5.0 * (tt - 0.5))))) < 1e-9);
    ++rows;
  }
  CHECK(rows == 40);
  CHECK(fs::exists(dir / "plot" / "schedule.svg"));
  fs::remove_all(dir);
}

TEST_CASE("train-teacher, distill, sweep and report end to end") {
  const fs::path dir = temp_dir("cli_sweep");
  const fs::path cfg = write_config(dir, kTiny);

  REQUIRE(run({"train-teacher", "-c", cfg.string(), "-o", (dir / "teacher").string(), "-s",
               "trainer.epochs=1"},
              dir)
              .code == 0);
  CHECK(fs::exists(dir / "teacher" / "teacher.ckpt"));
  const std::string ckpt = "models.teacher_checkpoint=" + (dir / "teacher" / "teacher.ckpt").string();
  CHECK(run({"distill", "-c", cfg.string(), "-o", (dir / "one").string(), "-s", ckpt, "--seed", "4"},
            dir)
            .code == 0);
  CHECK(fs::exists(dir / "one" / "student.ckpt"));
  // A distillation run without a teacher checkpoint is a configuration error.
  CHECK(run({"distill", "-c", cfg.string(), "-o", (dir / "two").string()}, dir).code == 2);

  const fs::path sweep = dir / "sweep";
  REQUIRE(run({"sweep", "-c", cfg.string(), "-o", sweep.string(), "--jobs", "2"}, dir).code == 0);
  for (const char* mode : {"student_only", "hinton_kd", "fixed_full", "gompertz_full"}) {
    CAPTURE(mode);
    CHECK(fs::exists(sweep / "synthetic" / "tiny_teacher__tiny_student" / mode / "seed_1" /
                     "run.json"));
  }
  CHECK(fs::exists(sweep / "synthetic" / "teacher_tiny_teacher" / "teacher.ckpt"));
  const auto stamp = fs::last_write_time(sweep / "synthetic" / "tiny_teacher__tiny_student" /
                                         "hinton_kd" / "seed_1" / "run.json");
  CHECK(run({"sweep", "-c", cfg.string(), "-o", sweep.string(), "--resume"}, dir).code == 0);
  CHECK(fs::last_write_time(sweep / "synthetic" / "tiny_teacher__tiny_student" / "hinton_kd" /
                            "seed_1" / "run.json") == stamp);

  CHECK(run({"report", "-o", sweep.string(), "--strict"}, dir).code == 0);
  std::ifstream md(sweep / "table.md");
  std::stringstream ss;
  ss << md.rdbuf();
  CHECK(ss.str().find("MISSING") == std::string::npos);
  CHECK(ss.str().find("tiny_student") != std::string::npos);

  // Removing a cell makes the strict report fail.
  fs::remove_all(sweep / "synthetic" / "tiny_teacher__tiny_student" / "hinton_kd");
  CHECK(run({"report", "-o", sweep.string(), "--strict"}, dir).code == 1);
  CHECK(run({"report", "-o", sweep.string()}, dir).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("shipped configs validate") {
  const fs::path dir = temp_dir("cli_shipped");
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(DYNKD_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK(run({"validate-config", "-c", entry.path().string()}, dir).code == 0);
    ++seen;
  }
  CHECK(seen >= 3);
  fs::remove_all(dir);
}
