#include <doctest.h>

#include <fstream>

#include "dynkd/error.hpp"
#include "dynkd/report.hpp"
#include "dynkd/trainer.hpp"
#include "support.hpp"

using namespace dynkd;
using dynkd::testing::temp_dir;

namespace fs = std::filesystem;

namespace {

void fake_run(const fs::path& dir, const std::string& role, const std::string& mode,
              const std::string& teacher, const std::string& student, int seed, double acc) {
  fs::create_directories(dir);
  nlohmann::json run = {{"role", role},       {"mode", mode},       {"seed", seed},
                        {"dataset", "synth"}, {"teacher", teacher}, {"student", student},
                        {"metrics", "metrics.csv"}};
  std::ofstream(dir / "run.json") << run.dump();
  std::ofstream m(dir / "metrics.csv");
  m << kMetricsHeader << "\n";
  m << "1,0.5,1,0,0,0,1,0.1,0.2,1\n";
  m << "2,0.5,1,0,0,0,1,0.3," << acc << ",1\n";
}

ComparisonTable three_rows(double base, double gomp) {
  std::vector<TableRow> rows;
  for (const char* s : {"a", "b", "c"}) rows.push_back(make_row("d", "t", s, 0.9, 0.5, base, gomp));
  return make_table(rows);
}

}  // namespace

TEST_CASE("improvement is zero for identical methods and antisymmetric") {
  const TableRow same = make_row("d", "t", "s", 0.9, 0.6, 0.7, 0.7);
  CHECK(*same.improvement() == 0.0);
  const TableRow ab = make_row("d", "t", "s", 0.9, 0.6, 0.7, 0.75);
  const TableRow ba = make_row("d", "t", "s", 0.9, 0.6, 0.75, 0.7);
  CHECK(*ab.improvement() == -*ba.improvement());
  TableRow partial = ab;
  partial.baseline_acc.samples.clear();
  CHECK(!partial.improvement());
  CHECK(partial.missing() == std::vector<std::string>{"hinton_kd"});
}

TEST_CASE("improvement summary averages rows in points") {
  const ComparisonTable t = make_table({make_row("x", "t", "a", 0.9, 0.5, 0.60, 0.70),
                                        make_row("x", "t", "b", 0.9, 0.5, 0.60, 0.65),
                                        make_row("y", "t", "a", 0.9, 0.5, 0.50, 0.40)});
  const auto s = summarize_improvement(t);
  REQUIRE(s.size() == 2);
  CHECK(s[0].dataset == "x");
  CHECK(s[0].rows == 2);
  CHECK(s[0].mean_points == doctest::Approx(7.5));
  CHECK(s[1].mean_points == doctest::Approx(-10.0));
  CHECK(format_points(7.5) == "+7.5");
  CHECK(format_points(-10.0) == "-10.0");
  CHECK(format_points(8.245) == "+8.2");

  TableRow lonely = make_row("z", "t", "a", 0.9, 0.5, 0.5, 0.5);
  lonely.gompertz_acc.samples.clear();
  CHECK_THROWS_AS(summarize_improvement(make_table({lonely})), InputError);
}

TEST_CASE("make_table sorts and range-checks") {
  const ComparisonTable t = make_table(
      {make_row("b", "t", "s", 0.9, 0.5, 0.5, 0.5), make_row("a", "t", "s", 0.9, 0.5, 0.5, 0.5)});
  CHECK(t.rows[0].dataset == "a");
  CHECK(t.datasets() == std::vector<std::string>{"a", "b"});
  CHECK_THROWS_AS(make_table({make_row("a", "t", "s", 0.9, 1.5, 0.5, 0.5)}), InputError);
}

TEST_CASE("polygon area and radar") {
  CHECK(polygon_area(std::vector<real>{1, 1, 1, 1}) == doctest::Approx(2.0));
  CHECK(polygon_area(std::vector<real>{1, 1, 1}) == doctest::Approx(3.0 * std::sqrt(3.0) / 4.0));
  // Pointwise dominance implies a larger area.
  const std::vector<real> lo{0.5, 0.6, 0.7, 0.8}, hi{0.55, 0.6, 0.75, 0.8};
  CHECK(polygon_area(hi) > polygon_area(lo));

  const ComparisonTable t = three_rows(0.6, 0.7);
  const std::string svg = render_radar(t, "d");
  CHECK(svg == render_radar(three_rows(0.6, 0.7), "d"));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg != render_radar(three_rows(0.6, 0.71), "d"));

  const ComparisonTable two = make_table(
      {make_row("d", "t", "a", 0.9, 0.5, 0.5, 0.5), make_row("d", "t", "b", 0.9, 0.5, 0.5, 0.5)});
  CHECK_THROWS_AS(render_radar(two, "d"), RefusalError);
}

TEST_CASE("build_table from run directories marks missing cells") {
  const fs::path dir = temp_dir("report");
  fake_run(dir / "teacher", "teacher", "student_only", "tt", "tt", 0, 0.9);
  for (int seed : {1, 2}) {
    const fs::path cell = dir / "tt__s1";
    const std::string s = "seed_" + std::to_string(seed);
    fake_run(cell / "hinton_kd" / s, "student", "hinton_kd", "tt", "s1", seed, 0.6 + 0.01 * seed);
    fake_run(cell / "gompertz_full" / s, "student", "gompertz_full", "tt", "s1", seed, 0.7);
    fake_run(cell / "fixed_full" / s, "student", "fixed_full", "tt", "s1", seed, 0.1);
  }
  fake_run(dir / "tt__s2" / "gompertz_full" / "seed_1", "student", "gompertz_full", "tt", "s2", 1,
           0.8);

  const auto runs = collect_runs(dir);
  CHECK(runs.size() == 8);
  const ComparisonTable t = build_table(runs);
  REQUIRE(t.rows.size() == 2);
  const TableRow& r1 = t.rows[0];
  CHECK(r1.student == "s1");
  CHECK(r1.teacher_acc.mean() == doctest::Approx(0.9));
  CHECK(r1.baseline_acc.samples.size() == 2);
  CHECK(r1.baseline_acc.mean() == doctest::Approx(0.615));
  CHECK(*r1.improvement() == doctest::Approx(0.085));
  CHECK(!t.rows[1].improvement());
  const auto missing = t.missing_cells();
  CHECK(missing.size() == 3);  // s1 student_only, s2 student_only and hinton_kd

  const std::string md = render_table_markdown(t);
  CHECK(md.find("MISSING") != std::string::npos);
  CHECK(render_table_csv(t).find("MISSING") != std::string::npos);

  const ReportResult res = write_report(t, dir / "out");
  CHECK(res.missing.size() == 3);
  CHECK(fs::exists(dir / "out" / "table.md"));
  CHECK(fs::exists(dir / "out" / "table.csv"));
  CHECK(fs::exists(dir / "out" / "summary.json"));
  CHECK(!fs::exists(dir / "out" / "radar_synth.svg"));
  fs::remove_all(dir);
}

TEST_CASE("collect_runs rejects broken records") {
  const fs::path dir = temp_dir("report_bad");
  CHECK_THROWS_AS(collect_runs(dir / "nope"), InputError);
  fs::create_directories(dir / "r");
  std::ofstream(dir / "r" / "run.json") << "{\"role\": ";
  CHECK_THROWS_AS(collect_runs(dir), IngestionError);
  std::ofstream(dir / "r" / "run.json") << "{\"role\": \"student\"}";
  CHECK_THROWS_AS(collect_runs(dir), IngestionError);
  fs::remove_all(dir);
}
