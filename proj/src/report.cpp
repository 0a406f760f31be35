#include "dynkd/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>

#include "dynkd/error.hpp"
#include "dynkd/trainer.hpp"

namespace dynkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMissing = "MISSING";

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string cell_text(const Cell& c) {
  if (!c.present()) return kMissing;
  if (c.samples.size() == 1) return fmt::format("{:.4f}", c.mean());
  return fmt::format("{:.4f} [{:.4f}, {:.4f}] n={}", c.mean(), c.min(), c.max(), c.samples.size());
}

std::string csv_value(const Cell& c) { return c.present() ? fmt::format("{:.17g}", c.mean()) : kMissing; }

void check_range(const Cell& c, const std::string& where) {
  for (real v : c.samples) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InputError(fmt::format("{}: accuracy {} outside [0, 1]", where, v));
    }
  }
}

}  // namespace

real Cell::mean() const {
  if (samples.empty()) throw InputError("mean of a missing cell");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<real>(samples.size());
}

real Cell::min() const {
  if (samples.empty()) throw InputError("min of a missing cell");
  return *std::min_element(samples.begin(), samples.end());
}

real Cell::max() const {
  if (samples.empty()) throw InputError("max of a missing cell");
  return *std::max_element(samples.begin(), samples.end());
}

std::optional<real> TableRow::improvement() const {
  if (!baseline_acc.present() || !gompertz_acc.present()) return std::nullopt;
  return gompertz_acc.mean() - baseline_acc.mean();
}

std::vector<std::string> TableRow::missing() const {
  std::vector<std::string> m;
  if (!teacher_acc.present()) m.push_back("teacher");
  if (!student_acc.present()) m.push_back("student_only");
  if (!baseline_acc.present()) m.push_back("hinton_kd");
  if (!gompertz_acc.present()) m.push_back("gompertz_full");
  return m;
}

std::vector<std::string> ComparisonTable::missing_cells() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    for (const auto& col : r.missing()) {
      out.push_back(r.dataset + "/" + r.teacher + "/" + r.student + ": " + col);
    }
  }
  return out;
}

std::vector<std::string> ComparisonTable::datasets() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (out.empty() || out.back() != r.dataset) out.push_back(r.dataset);
  }
  return out;
}

TableRow make_row(std::string dataset, std::string teacher, std::string student, real teacher_acc,
                  real student_acc, real baseline_acc, real gompertz_acc) {
  TableRow r;
  r.dataset = std::move(dataset);
  r.teacher = std::move(teacher);
  r.student = std::move(student);
  r.teacher_acc.samples = {teacher_acc};
  r.student_acc.samples = {student_acc};
  r.baseline_acc.samples = {baseline_acc};
  r.gompertz_acc.samples = {gompertz_acc};
  return r;
}

ComparisonTable make_table(std::vector<TableRow> rows) {
  for (const auto& r : rows) {
    const std::string where = r.dataset + "/" + r.teacher + "/" + r.student;
    check_range(r.teacher_acc, where);
    check_range(r.student_acc, where);
    check_range(r.baseline_acc, where);
    check_range(r.gompertz_acc, where);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const TableRow& a, const TableRow& b) {
    return std::tie(a.dataset, a.teacher, a.student) < std::tie(b.dataset, b.teacher, b.student);
  });
  return ComparisonTable{std::move(rows)};
}

std::vector<RunSummary> collect_runs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("run-set directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "run.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunSummary> runs;
  for (const auto& file : files) {
    std::ifstream in(file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw IngestionError("cannot parse " + file.string() + ": " + e.what(),
                           static_cast<long long>(e.byte));
    }
    RunSummary s;
    try {
      s.dataset = j.at("dataset").get<std::string>();
      s.teacher = j.at("teacher").get<std::string>();
      s.student = j.at("student").get<std::string>();
      s.role = j.at("role").get<std::string>();
      s.mode = parse_mode(j.at("mode").get<std::string>());
      s.seed = j.at("seed").get<std::uint64_t>();
      const auto rows = read_metrics_csv(file.parent_path() / j.at("metrics").get<std::string>());
      if (rows.empty()) throw IngestionError("empty metrics for " + file.string(), 0);
      s.final_acc_test = rows.back().acc_test;
    } catch (const json::exception& e) {
      throw IngestionError("incomplete run record " + file.string() + ": " + e.what(), 0);
    }
    s.run_dir = file.parent_path();
    runs.push_back(std::move(s));
  }
  return runs;
}

ComparisonTable build_table(std::span<const RunSummary> runs) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, TableRow> rows;
  std::map<std::pair<std::string, std::string>, Cell> teachers;
  for (const auto& r : runs) {
    if (r.role == "teacher") {
      teachers[{r.dataset, r.teacher}].samples.push_back(r.final_acc_test);
      continue;
    }
    TableRow& row = rows[{r.dataset, r.teacher, r.student}];
    row.dataset = r.dataset;
    row.teacher = r.teacher;
    row.student = r.student;
    switch (r.mode) {
      case Mode::student_only:
        row.student_acc.samples.push_back(r.final_acc_test);
        break;
      case Mode::hinton_kd:
        row.baseline_acc.samples.push_back(r.final_acc_test);
        break;
      case Mode::gompertz_full:
        row.gompertz_acc.samples.push_back(r.final_acc_test);
        break;
      case Mode::fixed_full:
        break;
    }
  }
  std::vector<TableRow> out;
  for (auto& [key, row] : rows) {
    if (auto it = teachers.find({row.dataset, row.teacher}); it != teachers.end()) {
      row.teacher_acc = it->second;
    }
    out.push_back(std::move(row));
  }
  return make_table(std::move(out));
}

std::vector<DatasetImprovement> summarize_improvement(const ComparisonTable& table) {
  std::vector<DatasetImprovement> out;
  for (const auto& ds : table.datasets()) {
    DatasetImprovement d{ds, 0, 0.0};
    real sum = 0.0;
    for (const auto& r : table.rows) {
      if (r.dataset != ds) continue;
      if (const auto imp = r.improvement()) {
        sum += *imp;
        ++d.rows;
      }
    }
    if (d.rows == 0) continue;
    d.mean_points = 100.0 * sum / d.rows;
    out.push_back(d);
  }
  if (out.empty()) throw InputError("no row has both baseline and gompertz results");
  return out;
}

std::string format_points(real points) {
  // Avoid "-0.0" for values that round to zero.
  if (std::abs(points) < 0.05) points = 0.0;
  return fmt::format("{:+.1f}", points);
}

real polygon_area(std::span<const real> radii) {
  const std::size_t n = radii.size();
  if (n < 3) return 0.0;
  real sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += radii[i] * radii[(i + 1) % n];
  return 0.5 * std::sin(2.0 * std::numbers::pi / static_cast<real>(n)) * sum;
}

std::string render_radar(const ComparisonTable& table, const std::string& dataset) {
  std::vector<const TableRow*> axes;
  for (const auto& r : table.rows) {
    if (r.dataset == dataset && r.improvement()) axes.push_back(&r);
  }
  if (axes.size() < 3) {
    throw RefusalError(fmt::format(
        "radar chart for {} needs at least 3 teacher-student pairs, found {}; "
        "use a bar chart or table.md instead",
        dataset, axes.size()));
  }
  constexpr real cx = 320.0, cy = 330.0, radius = 220.0;
  const int n = static_cast<int>(axes.size());
  auto point = [&](int i, real value) {
    const real angle = -std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * i / n;
    return std::pair<real, real>{cx + radius * value * std::cos(angle),
                                 cy + radius * value * std::sin(angle)};
  };
  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"680\" "
         "viewBox=\"0 0 640 680\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"640\" height=\"680\" fill=\"white\"/>\n";
  svg += fmt::format("<text x=\"320\" y=\"40\" text-anchor=\"middle\" font-size=\"18\">"
                     "Test accuracy by teacher-student pair ({})</text>\n",
                     xml_escape(dataset));
  for (int ring = 1; ring <= 5; ++ring) {
    std::string pts;
    for (int i = 0; i < n; ++i) {
      const auto [x, y] = point(i, ring / 5.0);
      pts += fmt::format("{}{:.3f},{:.3f}", i ? " " : "", x, y);
    }
    svg += fmt::format("<polygon points=\"{}\" fill=\"none\" stroke=\"#cccccc\"/>\n", pts);
  }
  for (int i = 0; i < n; ++i) {
    const auto [x, y] = point(i, 1.0);
    svg += fmt::format("<line x1=\"{:.3f}\" y1=\"{:.3f}\" x2=\"{:.3f}\" y2=\"{:.3f}\" "
                       "stroke=\"#999999\"/>\n",
                       cx, cy, x, y);
    const auto [lx, ly] = point(i, 1.12);
    svg += fmt::format("<text x=\"{:.3f}\" y=\"{:.3f}\" text-anchor=\"middle\" font-size=\"12\">"
                       "{}-{}</text>\n",
                       lx, ly, xml_escape(axes[i]->teacher), xml_escape(axes[i]->student));
  }
  auto polygon = [&](bool gompertz, const char* colour, const char* name) {
    std::string pts;
    for (int i = 0; i < n; ++i) {
      const real v = gompertz ? axes[i]->gompertz_acc.mean() : axes[i]->baseline_acc.mean();
      const auto [x, y] = point(i, v);
      pts += fmt::format("{}{:.3f},{:.3f}", i ? " " : "", x, y);
    }
    return fmt::format("<polygon id=\"{}\" points=\"{}\" fill=\"{}\" fill-opacity=\"0.25\" "
                       "stroke=\"{}\" stroke-width=\"2\"/>\n",
                       name, pts, colour, colour);
  };
  svg += polygon(false, "#1f77b4", "baseline");
  svg += polygon(true, "#d62728", "gompertz");
  svg += "<rect x=\"40\" y=\"630\" width=\"14\" height=\"14\" fill=\"#1f77b4\"/>\n";
  svg += "<text x=\"60\" y=\"642\" font-size=\"13\">fixed-weight KD (hinton_kd)</text>\n";
  svg += "<rect x=\"330\" y=\"630\" width=\"14\" height=\"14\" fill=\"#d62728\"/>\n";
  svg += "<text x=\"350\" y=\"642\" font-size=\"13\">Gompertz schedule (gompertz_full)</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string render_table_markdown(const ComparisonTable& table) {
  std::string md;
  md += "| dataset | teacher | student | teacher alone | student alone | hinton_kd | "
        "gompertz_full | improvement (pt) |\n";
  md += "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : table.rows) {
    const auto imp = r.improvement();
    md += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", r.dataset, r.teacher,
                      r.student, cell_text(r.teacher_acc), cell_text(r.student_acc),
                      cell_text(r.baseline_acc), cell_text(r.gompertz_acc),
                      imp ? format_points(100.0 * *imp) : std::string(kMissing));
  }
  return md;
}

std::string render_table_csv(const ComparisonTable& table) {
  std::string csv =
      "dataset,teacher,student,teacher_acc,student_acc,baseline_acc,gompertz_acc,improvement\n";
  for (const auto& r : table.rows) {
    const auto imp = r.improvement();
    csv += fmt::format("{},{},{},{},{},{},{},{}\n", r.dataset, r.teacher, r.student,
                       csv_value(r.teacher_acc), csv_value(r.student_acc),
                       csv_value(r.baseline_acc), csv_value(r.gompertz_acc),
                       imp ? fmt::format("{:.17g}", *imp) : std::string(kMissing));
  }
  return csv;
}

ReportResult write_report(const ComparisonTable& table, const fs::path& out_dir) {
  ReportResult result;
  result.missing = table.missing_cells();
  fs::create_directories(out_dir);
  auto write = [&](const fs::path& name, const std::string& text) {
    std::ofstream(out_dir / name, std::ios::binary | std::ios::trunc) << text;
    result.files.push_back(out_dir / name);
  };
  write("table.md", render_table_markdown(table));
  write("table.csv", render_table_csv(table));

  json summary;
  summary["missing"] = result.missing;
  json improvements = json::object();
  try {
    for (const auto& d : summarize_improvement(table)) {
      improvements[d.dataset] = {{"mean_improvement_points", d.mean_points},
                                 {"display", format_points(d.mean_points)},
                                 {"rows", d.rows}};
    }
  } catch (const InputError& e) {
    result.notes.push_back(e.what());
  }
  summary["improvement"] = improvements;
  for (const auto& ds : table.datasets()) {
    try {
      write("radar_" + ds + ".svg", render_radar(table, ds));
    } catch (const RefusalError& e) {
      result.notes.push_back(e.what());
    }
  }
  summary["notes"] = result.notes;
  write("summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace dynkd
