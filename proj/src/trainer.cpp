#include "dynkd/trainer.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "dynkd/checkpoint.hpp"
#include "dynkd/error.hpp"
#include "dynkd/kernels.hpp"
#include "dynkd/nn/zoo.hpp"

namespace dynkd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kEvalChunk = 256;

// Independent sub-seeds for model init, adapter init, shuffling and
// augmentation, so toggling one consumer never perturbs another.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kInit = 1, kAdapter = 2, kAugment = 3, kShuffle = 100 };

int argmax_row(const Tensor& logits, int row) {
  const int k = logits.shape().c;
  const real* z = logits.data() + static_cast<std::size_t>(row) * k;
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (z[j] > z[best]) best = j;
  }
  return best;
}

std::string format_row(const EpochRow& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}",
                     r.epoch, r.beta, r.loss.classification, r.loss.wasserstein,
                     r.loss.grad_match, r.loss.distill, r.loss.total, r.acc_train, r.acc_test,
                     r.seconds);
}

// Teacher outputs for a set of images: features, logits and the per-sample
// feature gradient of its own cross-entropy.
struct TeacherView {
  Tensor features;
  Tensor logits;
  Tensor gradient;
};

TeacherView run_teacher(nn::Model& teacher, const Tensor& images, std::span<const int> labels,
                        bool want_gradient) {
  TeacherView v;
  auto out = teacher.forward_with_features(images, false);
  if (want_gradient) {
    v.gradient = nn::feature_gradient(teacher.head(), out.logits, labels, teacher.feature_shape());
  }
  v.features = std::move(out.features);
  v.logits = std::move(out.logits);
  return v;
}

// Teacher outputs over a whole split, evaluated in chunks.
TeacherView cache_teacher(nn::Model& teacher, const Dataset& data, bool want_gradient) {
  const int n = data.size();
  const Shape fs1 = teacher.feature_shape();
  TeacherView all{Tensor({n, fs1.c, fs1.h, fs1.w}), Tensor({n, teacher.num_classes(), 1, 1}),
                  want_gradient ? Tensor({n, fs1.c, fs1.h, fs1.w}) : Tensor()};
  std::vector<int> idx;
  for (int start = 0; start < n; start += kEvalChunk) {
    const int end = std::min(n, start + kEvalChunk);
    idx.resize(end - start);
    for (int i = start; i < end; ++i) idx[i - start] = i;
    const Batch b = gather_batch(data, idx);
    const TeacherView part = run_teacher(teacher, b.images, b.labels, want_gradient);
    std::copy(part.features.values().begin(), part.features.values().end(),
              all.features.data() + start * fs1.per_sample());
    std::copy(part.logits.values().begin(), part.logits.values().end(),
              all.logits.data() + static_cast<std::size_t>(start) * teacher.num_classes());
    if (want_gradient) {
      std::copy(part.gradient.values().begin(), part.gradient.values().end(),
                all.gradient.data() + start * fs1.per_sample());
    }
  }
  return all;
}

class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, const OptimizerConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    velocity_.reserve(params_.size());
    for (const Parameter* p : params_) velocity_.emplace_back(p->value.shape());
  }

  void step(real lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      real* w = p.value.data();
      const real* g = p.grad.data();
      real* v = velocity_[i].data();
      const real wd = p.weight_decay ? cfg_.weight_decay : 0.0;
      const std::size_t n = p.value.size();
      for (std::size_t j = 0; j < n; ++j) {
        v[j] = cfg_.momentum * v[j] + g[j] + wd * w[j];
        w[j] -= lr * v[j];
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> velocity_;
};

struct ActiveTerms {
  bool teacher = false;
  bool wasserstein = false;
  bool grad_match = false;
  bool distill = false;
};

ActiveTerms active_terms(const ExperimentConfig& c) {
  ActiveTerms t;
  switch (c.trainer.mode) {
    case Mode::student_only:
      break;
    case Mode::hinton_kd:
      t.distill = true;
      break;
    case Mode::fixed_full:
    case Mode::gompertz_full:
      t.wasserstein = c.losses.use_wasserstein;
      t.grad_match = c.losses.use_grad_match;
      t.distill = c.losses.use_distill;
      break;
  }
  t.teacher = t.wasserstein || t.grad_match || t.distill;
  return t;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& x, real weight) {
  sum.classification += weight * x.classification;
  sum.wasserstein += weight * x.wasserstein;
  sum.grad_match += weight * x.grad_match;
  sum.distill += weight * x.distill;
  sum.total += weight * x.total;
}

json normalization_json(const Normalization& n) {
  return {{"mean", n.mean}, {"std", n.std}};
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

RunRecord fit(const ExperimentConfig& config, const TrainInputs& inputs, const fs::path& run_dir,
              const std::string& role) {
  if (!inputs.train || !inputs.test) throw InputError("train: datasets not provided");
  if (const auto v = validate(config); !v.empty()) {
    std::string msg = "invalid config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  const Dataset& train_set = *inputs.train;
  const Dataset& test_set = *inputs.test;
  if (train_set.num_classes != test_set.num_classes) {
    throw ConfigError("train and test splits disagree on the class count");
  }
  const ActiveTerms terms = active_terms(config);
  nn::Model* teacher = inputs.teacher;
  if (terms.teacher) {
    if (!teacher) throw ConfigError("mode " + to_string(config.trainer.mode) + " needs a teacher");
    if (teacher->num_classes() != train_set.num_classes) {
      throw ConfigError(fmt::format("teacher has {} classes but the dataset has {}",
                                    teacher->num_classes(), train_set.num_classes));
    }
  }
  if (config.trainer.threads > 0) omp_set_num_threads(config.trainer.threads);

  const TrainerConfig& tc = config.trainer;
  const std::uint64_t seed = tc.seed;

  RunRecord record;
  record.config = config;
  nn::Model student = nn::build_model(config.models.student, train_set.num_classes,
                                      derive_seed(seed, kInit), config.models.allow_full_scale);

  std::optional<ChannelAdapter> adapter;
  if (terms.grad_match) {
    adapter = ChannelAdapter::random(teacher->feature_shape().c, student.feature_shape().c,
                                     derive_seed(seed, kAdapter));
  }
  std::vector<Parameter*> trainable = student.parameters();
  if (adapter) {
    trainable.push_back(&adapter->weight);
    trainable.push_back(&adapter->bias);
  }
  Sgd optimizer(trainable, tc.optimizer);

  if (teacher) {
    teacher->set_frozen(true);
    record.teacher_checksum_before = teacher->parameter_checksum();
  }
  std::optional<TeacherView> cache;
  if (terms.teacher && !config.dataset.augment) {
    cache = cache_teacher(*teacher, train_set, terms.grad_match);
  }

  std::ofstream metrics, batches_csv;
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    std::ofstream(run_dir / "config.json") << to_json(config).dump(2) << "\n";
    metrics.open(run_dir / "metrics.csv", std::ios::trunc);
    metrics << kMetricsHeader << "\n";
    if (tc.log_batches) {
      batches_csv.open(run_dir / "batches.csv", std::ios::trunc);
      batches_csv << "epoch,batch,size,beta,loss_cls,loss_w,loss_grad,loss_kd,loss_total\n";
    }
  }

  std::mt19937_64 augment_rng(derive_seed(seed, kAugment));
  const bool second_order = config.losses.second_order_grad_match;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    const real beta = epoch_beta(config, epoch);
    const real lr = learning_rate_at(tc.optimizer, epoch, tc.epochs);
    const auto order = shuffled_order(train_set.size(), derive_seed(seed, kShuffle + epoch));
    const auto batches = make_batches(order, tc.batch_size);

    EpochRow row;
    row.epoch = epoch;
    row.beta = beta;
    int correct = 0;
    int seen = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      Batch batch = gather_batch(train_set, idx);
      if (config.dataset.augment) augment_batch(batch.images, augment_rng);
      const int n = static_cast<int>(idx.size());

      TeacherView tv;
      if (terms.teacher) {
        if (cache) {
          tv.features = gather_samples(cache->features, idx);
          tv.logits = gather_samples(cache->logits, idx);
          if (terms.grad_match) tv.gradient = gather_samples(cache->gradient, idx);
        } else {
          tv = run_teacher(*teacher, batch.images, batch.labels, terms.grad_match);
        }
      }

      student.zero_grad();
      if (adapter) {
        adapter->weight.zero_grad();
        adapter->bias.zero_grad();
      }
      auto out = student.forward_with_features(batch.images, true);
      if (!out.logits.all_finite() || !out.features.all_finite()) {
        throw NumericError(fmt::format("{} run aborted at epoch {} batch {}: non-finite student "
                                       "outputs",
                                       role, epoch, bi));
      }
      for (int b = 0; b < n; ++b) {
        if (argmax_row(out.logits, b) == batch.labels[b]) ++correct;
      }
      seen += n;

      LossParts parts;
      Tensor d_logits;
      parts.classification = classification_loss(out.logits, batch.labels, &d_logits);
      Tensor d_features(out.features.shape());

      if (terms.wasserstein) {
        Tensor dw;
        parts.wasserstein = wasserstein_feature_loss(tv.features, out.features, &dw);
        for (std::size_t i = 0; i < dw.size(); ++i) d_features[i] += beta * dw[i];
      }
      Tensor d_logits_kd;
      if (terms.distill) {
        parts.distill = distillation_loss(tv.logits, out.logits, config.losses.tau,
                                          config.losses.kd_tau_squared, &d_logits_kd);
      }
      Tensor g_student, g_coeff;
      if (terms.grad_match) {
        g_student = nn::feature_gradient(student.head(), out.logits, batch.labels,
                                         student.feature_shape());
        auto [g_t, g_s] = align_spatial(tv.gradient, g_student);
        const Tensor g_t_re = adapt_channels(*adapter, g_t);
        GradMatchResult gm = gradient_matching_loss(g_t_re, g_s, config.losses.r, true);
        parts.grad_match = gm.value;
        for (std::size_t i = 0; i < gm.d_teacher.size(); ++i) gm.d_teacher[i] *= beta;
        adapt_channels_backward(*adapter, g_t, gm.d_teacher);
        if (second_order) {
          for (std::size_t i = 0; i < gm.d_student.size(); ++i) gm.d_student[i] *= beta;
          if (g_s.shape() == g_student.shape()) {
            g_coeff = std::move(gm.d_student);
          } else {
            kernels::parallel::adaptive_avgpool_backward(g_student.shape(), gm.d_student, g_coeff);
          }
        }
      }

      LossBreakdown loss;
      try {
        loss = total_loss(parts, beta);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("{} run aborted at epoch {} batch {}: {}", role, epoch,
                                       bi, e.what()));
      }

      if (terms.distill) {
        for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] += beta * d_logits_kd[i];
      }
      if (!g_coeff.empty()) {
        const Tensor dz = second_order_head_terms(student.head(), out.logits, batch.labels,
                                                  g_coeff);
        for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] += dz[i];
      }
      student.backward(d_logits, terms.wasserstein ? &d_features : nullptr);
      for (Parameter* p : trainable) {
        if (!p->grad.all_finite()) {
          throw NumericError(fmt::format("{} run aborted at epoch {} batch {}: non-finite "
                                         "gradient for {}",
                                         role, epoch, bi, p->name));
        }
      }
      optimizer.step(lr);

      accumulate(row.loss, loss, n);
      BatchRow br{epoch, static_cast<int>(bi), n, loss};
      if (batches_csv.is_open()) {
        batches_csv << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                                   epoch, bi, n, beta, loss.classification, loss.wasserstein,
                                   loss.grad_match, loss.distill, loss.total);
      }
      record.batches.push_back(br);
    }

    const real inv = 1.0 / seen;
    row.loss.classification *= inv;
    row.loss.wasserstein *= inv;
    row.loss.grad_match *= inv;
    row.loss.distill *= inv;
    row.loss.total *= inv;
    row.loss.beta = beta;
    row.acc_train = static_cast<real>(correct) / seen;
    row.acc_test = evaluate(student, test_set);
    row.seconds =
        std::chrono::duration<real>(std::chrono::steady_clock::now() - t_start).count();
    record.epochs.push_back(row);
    if (metrics.is_open()) metrics << format_row(row) << "\n" << std::flush;
  }

  if (teacher) record.teacher_checksum_after = teacher->parameter_checksum();

  if (!run_dir.empty()) {
    const std::string ckpt_name = role == "teacher" ? "teacher.ckpt" : "student.ckpt";
    json meta = {{"role", role},
                 {"mode", to_string(tc.mode)},
                 {"seed", seed},
                 {"dataset", train_set.name},
                 {"epochs", tc.epochs},
                 {"final_acc_test", record.final_test_accuracy()},
                 {"normalization", normalization_json(train_set.normalization)}};
    record.checkpoint = run_dir / ckpt_name;
    save_checkpoint(record.checkpoint, student, meta);
    json run = meta;
    run["teacher"] = config.models.teacher;
    run["student"] = config.models.student;
    run["architecture"] = student.architecture_id();
    run["final_acc_train"] = record.epochs.back().acc_train;
    run["metrics"] = "metrics.csv";
    run["checkpoint"] = ckpt_name;
    run["num_train"] = train_set.size();
    run["num_test"] = test_set.size();
    if (teacher) {
      run["teacher_checksum_before"] = hex64(record.teacher_checksum_before);
      run["teacher_checksum_after"] = hex64(record.teacher_checksum_after);
    }
    std::ofstream(run_dir / "run.json") << run.dump(2) << "\n";
    record.run_dir = run_dir;
  }
  record.model.emplace(std::move(student));
  return record;
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const ExperimentConfig& config) {
  LoadedData d;
  d.train = load_dataset(config.dataset.spec(Split::train));
  DatasetSpec test_spec = config.dataset.spec(Split::test);
  test_spec.normalization = d.train.normalization;
  d.test = load_dataset(test_spec);
  return d;
}

}  // namespace

// d/dz of sum_b <G_b, W^T (softmax(z_b) - onehot_b)>, i.e. J_b (W G_b) with
// J = diag(p) - p p^T, plus the explicit dependence on W accumulated into the
// head's weight gradient.
Tensor second_order_head_terms(nn::Linear& head, const Tensor& logits,
                               std::span<const int> labels, const Tensor& g_coeff) {
  const int batch = logits.shape().n;
  const int k = logits.shape().c;
  const int in = head.in_features();
  const Tensor p = softmax(logits);
  const real* w = head.weight().value.data();
  real* dw = head.weight().grad.data();
  Tensor dz(logits.shape());
  std::vector<real> u(k);
  for (int b = 0; b < batch; ++b) {
    const real* gb = g_coeff.data() + static_cast<std::size_t>(b) * in;
    const real* pb = p.data() + static_cast<std::size_t>(b) * k;
    real pu = 0.0;
    for (int o = 0; o < k; ++o) {
      real s = 0.0;
      for (int i = 0; i < in; ++i) s += w[static_cast<std::size_t>(o) * in + i] * gb[i];
      u[o] = s;
      pu += pb[o] * s;
    }
    for (int o = 0; o < k; ++o) {
      dz.at(b, o) = pb[o] * (u[o] - pu);
      const real residual = pb[o] - (o == labels[b] ? 1.0 : 0.0);
      for (int i = 0; i < in; ++i) dw[static_cast<std::size_t>(o) * in + i] += residual * gb[i];
    }
  }
  return dz;
}

real epoch_beta(const ExperimentConfig& config, int epoch) {
  switch (config.trainer.mode) {
    case Mode::gompertz_full:
      return beta_at(config.schedule, epoch_time(config.schedule, epoch, config.trainer.epochs));
    case Mode::fixed_full:
    case Mode::hinton_kd:
      return config.trainer.constant_beta;
    case Mode::student_only:
      return 0.0;
  }
  return 0.0;
}

real learning_rate_at(const OptimizerConfig& opt, int epoch, int total_epochs) {
  if (opt.decay == "constant") return opt.learning_rate;
  const real progress = static_cast<real>(epoch - 1) / total_epochs;
  return opt.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

real evaluate(nn::Classifier& model, const Dataset& data) {
  if (model.num_classes() != data.num_classes) {
    throw ConfigError(fmt::format("model has {} classes but the dataset has {}",
                                  model.num_classes(), data.num_classes));
  }
  if (data.size() == 0) throw InputError("evaluate: empty dataset");
  int correct = 0;
  std::vector<int> idx;
  for (int start = 0; start < data.size(); start += kEvalChunk) {
    const int end = std::min(data.size(), start + kEvalChunk);
    idx.resize(end - start);
    for (int i = start; i < end; ++i) idx[i - start] = i;
    const Batch b = gather_batch(data, idx);
    const Tensor logits = model.predict_logits(b.images);
    for (int i = 0; i < end - start; ++i) {
      if (argmax_row(logits, i) == b.labels[i]) ++correct;
    }
  }
  return static_cast<real>(correct) / data.size();
}

RunRecord train(const ExperimentConfig& config, const TrainInputs& inputs,
                const fs::path& run_dir) {
  return fit(config, inputs, run_dir, "student");
}

RunRecord train(const ExperimentConfig& config, const fs::path& run_dir) {
  LoadedData data = load_data(config);
  std::optional<LoadedCheckpoint> teacher;
  if (active_terms(config).teacher) {
    if (config.models.teacher_checkpoint.empty()) {
      throw ConfigError("models.teacher_checkpoint: required for mode " +
                        to_string(config.trainer.mode));
    }
    teacher.emplace(load_checkpoint(config.models.teacher_checkpoint));
    if (teacher->model.architecture_id() != config.models.teacher) {
      throw ConfigError("models.teacher: checkpoint holds '" + teacher->model.architecture_id() +
                        "', config names '" + config.models.teacher + "'");
    }
  }
  return fit(config, {&data.train, &data.test, teacher ? &teacher->model : nullptr}, run_dir, "student");
}

RunRecord train_teacher(const ExperimentConfig& config, const TrainInputs& inputs,
                        const fs::path& run_dir) {
  ExperimentConfig c = config;
  c.models.student = c.models.teacher;
  c.trainer.mode = Mode::student_only;
  return fit(c, {inputs.train, inputs.test, nullptr}, run_dir, "teacher");
}

RunRecord train_teacher(const ExperimentConfig& config, const fs::path& run_dir) {
  LoadedData data = load_data(config);
  return train_teacher(config, {&data.train, &data.test, nullptr}, run_dir);
}

std::vector<EpochRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read " + path.string(), 0);
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw IngestionError("unexpected metrics header in " + path.string(), 0);
  long long offset = static_cast<long long>(line.size()) + 1;
  std::vector<EpochRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 10) throw IngestionError("malformed metrics row in " + path.string(), offset);
    EpochRow r;
    try {
      r.epoch = std::stoi(cells[0]);
      r.beta = std::stod(cells[1]);
      r.loss.classification = std::stod(cells[2]);
      r.loss.wasserstein = std::stod(cells[3]);
      r.loss.grad_match = std::stod(cells[4]);
      r.loss.distill = std::stod(cells[5]);
      r.loss.total = std::stod(cells[6]);
      r.acc_train = std::stod(cells[7]);
      r.acc_test = std::stod(cells[8]);
      r.seconds = std::stod(cells[9]);
    } catch (const std::exception&) {
      throw IngestionError("unparsable metrics row in " + path.string(), offset);
    }
    r.loss.beta = r.beta;
    rows.push_back(r);
    offset += static_cast<long long>(line.size()) + 1;
  }
  return rows;
}

}  // namespace dynkd
