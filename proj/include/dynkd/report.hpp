#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynkd/config.hpp"
#include "dynkd/tensor.hpp"

namespace dynkd {

// One table cell: the final test accuracies of every seed that produced it.
struct Cell {
  std::vector<real> samples;

  bool present() const { return !samples.empty(); }
  real mean() const;
  real min() const;
  real max() const;
};

struct TableRow {
  std::string dataset;
  std::string teacher;
  std::string student;
  Cell teacher_acc;   // teacher trained alone
  Cell student_acc;   // student_only
  Cell baseline_acc;  // hinton_kd
  Cell gompertz_acc;  // gompertz_full

  /// gompertz - baseline (fractions, not points); empty if either is missing.
  std::optional<real> improvement() const;
  /// Names of the absent columns.
  std::vector<std::string> missing() const;
};

struct ComparisonTable {
  std::vector<TableRow> rows;  // sorted by (dataset, teacher, student)

  /// "dataset/teacher/student: column" for every absent cell.
  std::vector<std::string> missing_cells() const;
  std::vector<std::string> datasets() const;
};

TableRow make_row(std::string dataset, std::string teacher, std::string student, real teacher_acc,
                  real student_acc, real baseline_acc, real gompertz_acc);

/// Sorts rows and checks every accuracy lies in [0, 1] (InputError otherwise).
ComparisonTable make_table(std::vector<TableRow> rows);

// A finished run as recorded in its run.json, with the accuracy taken from the
// last row of its metrics.csv.
struct RunSummary {
  std::string dataset;
  std::string teacher;
  std::string student;
  std::string role;  // "teacher" or "student"
  Mode mode = Mode::student_only;
  std::uint64_t seed = 0;
  real final_acc_test = 0.0;
  std::filesystem::path run_dir;
};

/// Every run.json below `dir`, in path order.
std::vector<RunSummary> collect_runs(const std::filesystem::path& dir);

/// Groups runs into rows. Teacher runs fill the teacher column of every row
/// sharing their (dataset, teacher); fixed_full runs are not tabulated.
ComparisonTable build_table(std::span<const RunSummary> runs);

struct DatasetImprovement {
  std::string dataset;
  int rows = 0;        // rows with both methods present
  real mean_points = 0.0;  // unweighted row mean of (gompertz - baseline), in points
};

/// Per dataset, in table order. Throws InputError when no row has both methods.
std::vector<DatasetImprovement> summarize_improvement(const ComparisonTable& table);

/// "+8.2" style, one decimal.
std::string format_points(real points);

/// Area of the polygon with the given radii on equally spaced axes.
real polygon_area(std::span<const real> radii);

/// SVG radar chart of baseline vs gompertz accuracy, one axis per complete row
/// of `dataset`. Byte-identical for identical input. Refuses fewer than three
/// axes (RefusalError).
std::string render_radar(const ComparisonTable& table, const std::string& dataset);

std::string render_table_markdown(const ComparisonTable& table);
std::string render_table_csv(const ComparisonTable& table);

struct ReportResult {
  std::vector<std::string> missing;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notes;
};

/// Writes table.md, table.csv, summary.json and radar_<dataset>.svg (where the
/// dataset has at least three complete rows) under `out_dir`.
ReportResult write_report(const ComparisonTable& table, const std::filesystem::path& out_dir);

}  // namespace dynkd
