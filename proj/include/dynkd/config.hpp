#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynkd/data.hpp"
#include "dynkd/schedule.hpp"

namespace dynkd {

enum class Mode { gompertz_full, fixed_full, hinton_kd, student_only };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);
inline constexpr Mode kAllModes[] = {Mode::student_only, Mode::hinton_kd, Mode::fixed_full,
                                     Mode::gompertz_full};

struct DatasetConfig {
  DatasetName name = DatasetName::synthetic;
  std::filesystem::path root;
  std::optional<int> subset_size;       // train split
  std::optional<int> test_subset_size;  // test split
  std::uint64_t subset_seed = 0;
  bool augment = false;
  bool allow_download = false;
  std::string archive_sha256;
  SyntheticSpec synthetic;

  DatasetSpec spec(Split split) const;
};

struct ModelsConfig {
  std::string teacher = "tiny_teacher";
  std::string student = "tiny_student";
  std::filesystem::path teacher_checkpoint;
  bool allow_full_scale = false;
};

struct LossConfig {
  real r = 0.5;
  real tau = 4.0;
  bool kd_tau_squared = false;
  bool second_order_grad_match = false;
  // Ablation switches; a disabled term contributes 0 and no gradient.
  bool use_wasserstein = true;
  bool use_grad_match = true;
  bool use_distill = true;
};

struct OptimizerConfig {
  std::string kind = "sgd";
  real learning_rate = 0.05;
  real momentum = 0.9;
  real weight_decay = 5e-4;
  std::string decay = "cosine";  // cosine | constant
};

struct TrainerConfig {
  Mode mode = Mode::gompertz_full;
  int epochs = 20;
  int batch_size = 64;
  std::uint64_t seed = 1;
  real constant_beta = 1.0;  // fixed_full and hinton_kd
  OptimizerConfig optimizer;
  bool log_batches = false;
  int threads = 0;  // 0 keeps the OpenMP default
};

struct SweepCell {
  std::string teacher;
  std::string student;
};

struct SweepConfig {
  std::vector<SweepCell> cells{{"tiny_teacher", "tiny_student"}};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<Mode> modes{std::begin(kAllModes), std::end(kAllModes)};
  int teacher_epochs = 15;
  std::uint64_t teacher_seed = 0;
};

struct ReportConfig {
  bool strict = false;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelsConfig models;
  GompertzSchedule schedule;
  LossConfig losses;
  TrainerConfig trainer;
  SweepConfig sweep;
  ReportConfig report;
};

/// Parses a JSON config document. Unknown keys and type errors raise
/// ConfigError naming the field; syntax errors name the line and column.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Applies "dotted.key=value" overrides to a parsed document. Values parse as
/// JSON when possible and as strings otherwise. Deeper keys are applied last,
/// so they win over a shallower override of an enclosing section.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

/// Every violated constraint, prefixed with its section.
std::vector<std::string> validate(const ExperimentConfig& config);

/// Fully explicit snapshot; parse_config(to_json(c).dump()) reproduces c.
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace dynkd
