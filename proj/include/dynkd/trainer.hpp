#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dynkd/config.hpp"
#include "dynkd/data.hpp"
#include "dynkd/losses.hpp"
#include "dynkd/nn/model.hpp"

namespace dynkd {

struct EpochRow {
  int epoch = 0;  // 1-based
  real beta = 0.0;
  LossBreakdown loss;  // sample-weighted mean over the epoch's batches
  real acc_train = 0.0;  // running accuracy of the training pass
  real acc_test = 0.0;
  real seconds = 0.0;
};

struct BatchRow {
  int epoch = 0;
  int batch = 0;  // 0-based within the epoch
  int size = 0;
  LossBreakdown loss;
};

struct RunRecord {
  ExperimentConfig config;  // as run, including the seed
  std::vector<EpochRow> epochs;
  std::vector<BatchRow> batches;
  std::filesystem::path run_dir;     // empty when nothing was written
  std::filesystem::path checkpoint;  // empty when nothing was written
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
  std::optional<nn::Model> model;  // the trained network

  real final_test_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().acc_test; }
};

inline constexpr const char* kMetricsHeader =
    "epoch,beta,loss_cls,loss_w,loss_grad,loss_kd,loss_total,acc_train,acc_test,seconds";

/// Pre-loaded inputs. `teacher` may be null for student_only.
struct TrainInputs {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  nn::Model* teacher = nullptr;
};

/// Distills config.models.student from the frozen teacher under
/// config.trainer.mode. When `run_dir` is non-empty it receives config.json,
/// metrics.csv, student.ckpt, run.json and (with log_batches) batches.csv.
/// Throws NumericError with epoch/batch coordinates on a non-finite loss.
RunRecord train(const ExperimentConfig& config, const TrainInputs& inputs,
                const std::filesystem::path& run_dir = {});

/// Loads the datasets and teacher checkpoint named by the config, then trains.
RunRecord train(const ExperimentConfig& config, const std::filesystem::path& run_dir);

/// Plain cross-entropy training of config.models.teacher; the checkpoint is
/// teacher.ckpt and carries the final test accuracy in its metadata.
RunRecord train_teacher(const ExperimentConfig& config, const TrainInputs& inputs,
                        const std::filesystem::path& run_dir = {});
RunRecord train_teacher(const ExperimentConfig& config, const std::filesystem::path& run_dir);

/// Top-1 accuracy over the whole split.
real evaluate(nn::Classifier& model, const Dataset& data);

/// Beta logged for an epoch under the config's mode.
real epoch_beta(const ExperimentConfig& config, int epoch);

/// Learning rate for a 1-based epoch under the optimizer's decay.
real learning_rate_at(const OptimizerConfig& opt, int epoch, int total_epochs);

/// Second-order part of the gradient-matching step. With
/// g = W^T (softmax(z) - onehot) per sample, returns d/dz of sum_b <G_b, g_b>
/// and adds its explicit derivative w.r.t. W to head.weight().grad.
Tensor second_order_head_terms(nn::Linear& head, const Tensor& logits,
                               std::span<const int> labels, const Tensor& g_coeff);

/// Reads a metrics.csv written by train().
std::vector<EpochRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace dynkd
