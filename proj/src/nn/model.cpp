#include "dynkd/nn/model.hpp"

#include "dynkd/error.hpp"
#include "dynkd/losses.hpp"

namespace dynkd::nn {

std::string to_string(FeatureTap tap) {
  return tap == FeatureTap::global_pool ? "global_pool" : "pre_flatten";
}

FeatureTap parse_feature_tap(const std::string& text) {
  if (text == "global_pool") return FeatureTap::global_pool;
  if (text == "pre_flatten") return FeatureTap::pre_flatten;
  throw ConfigError("unknown feature tap '" + text + "'");
}

Model::Model(std::string architecture_id, int num_classes, std::uint64_t seed, Sequential backbone,
             FeatureTap tap, Shape input_shape)
    : architecture_id_(std::move(architecture_id)),
      num_classes_(num_classes),
      seed_(seed),
      backbone_(std::move(backbone)),
      head_(1, 1),
      tap_(tap),
      input_shape_{1, input_shape.c, input_shape.h, input_shape.w} {
  if (num_classes < 2) throw ConfigError("a classifier needs at least 2 classes");
  feature_shape_ = backbone_.output_shape(input_shape_);
  head_ = Linear(static_cast<int>(feature_shape_.per_sample()), num_classes);
  Rng rng(seed);
  backbone_.initialize(rng);
  head_.initialize(rng);
}

ForwardResult Model::forward_with_features(const Tensor& batch, bool training) {
  const Shape& s = batch.shape();
  if (s.c != input_shape_.c || s.h != input_shape_.h || s.w != input_shape_.w) {
    throw ShapeError(architecture_id_ + " expects input (N, " + std::to_string(input_shape_.c) +
                     ", " + std::to_string(input_shape_.h) + ", " + std::to_string(input_shape_.w) +
                     "), got " + s.str());
  }
  if (training && frozen_) throw Error(architecture_id_ + " is frozen; training forward refused");
  ForwardResult out;
  out.features = backbone_.forward(batch, training);
  out.logits = head_.forward(out.features, training);
  return out;
}

Tensor Model::predict_logits(const Tensor& batch) { return forward_with_features(batch, false).logits; }

Tensor Model::head_logits(const Tensor& features) const { return head_.apply(features); }

void Model::backward(const Tensor& d_logits, const Tensor* d_features_extra) {
  if (frozen_) throw Error(architecture_id_ + " is frozen; backward refused");
  Tensor d_features = head_.backward(d_logits).reshaped(
      {d_logits.shape().n, feature_shape_.c, feature_shape_.h, feature_shape_.w});
  if (d_features_extra) {
    if (!(d_features_extra->shape() == d_features.shape())) {
      throw ShapeError("feature gradient shape " + d_features_extra->shape().str() +
                       " does not match " + d_features.shape().str());
    }
    for (std::size_t i = 0; i < d_features.size(); ++i) d_features[i] += (*d_features_extra)[i];
  }
  backbone_.backward(d_features);
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

std::vector<NamedParameter> Model::named_parameters() {
  std::vector<NamedParameter> out;
  backbone_.collect_parameters("backbone.", out);
  head_.collect_parameters("head.", out);
  return out;
}

std::vector<NamedBuffer> Model::named_buffers() {
  std::vector<NamedBuffer> out;
  backbone_.collect_buffers("backbone.", out);
  return out;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& np : named_parameters()) out.push_back(np.param);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t total = 0;
  for (Parameter* p : parameters()) total += p->value.size();
  return total;
}

std::uint64_t Model::parameter_checksum() {
  std::vector<const Tensor*> tensors;
  for (Parameter* p : parameters()) tensors.push_back(&p->value);
  for (auto& b : named_buffers()) tensors.push_back(b.tensor);
  return checksum(tensors);
}

Tensor feature_gradient(const Linear& head, const Tensor& logits, std::span<const int> labels,
                        const Shape& feature_shape) {
  const int batch = logits.shape().n;
  const int k = static_cast<int>(logits.shape().per_sample());
  if (static_cast<int>(labels.size()) != batch) throw ShapeError("label count mismatch");
  Tensor residual = softmax(logits);
  for (int b = 0; b < batch; ++b) {
    if (labels[b] < 0 || labels[b] >= k) {
      throw InputError("label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(k) +
                       ")");
    }
    residual[static_cast<std::size_t>(b) * k + labels[b]] -= 1.0;
  }
  const int d = head.in_features();
  const Tensor& w = head.weight().value;
  Tensor g({batch, feature_shape.c, feature_shape.h, feature_shape.w});
  if (static_cast<int>(g.shape().per_sample()) != d) throw ShapeError("feature shape mismatch");
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    real* dst = g.data() + static_cast<std::size_t>(b) * d;
    for (int c = 0; c < k; ++c) {
      const real r = residual[static_cast<std::size_t>(b) * k + c];
      const real* row = w.data() + static_cast<std::size_t>(c) * d;
      for (int i = 0; i < d; ++i) dst[i] += r * row[i];
    }
  }
  return g;
}

Tensor penultimate_gradient(Model& model, const Tensor& batch, std::span<const int> labels) {
  const ForwardResult fw = model.forward_with_features(batch, false);
  return feature_gradient(model.head(), fw.logits, labels, fw.features.shape());
}

}  // namespace dynkd::nn
