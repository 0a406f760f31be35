#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynkd/nn/layers.hpp"
#include "dynkd/tensor.hpp"

namespace dynkd::nn {

struct ForwardResult {
  Tensor features;  // (N, C, H, W) tapped at the classifier input
  Tensor logits;    // (N, num_classes, 1, 1)
};

// Anything that maps an image batch to class logits; evaluation only needs this.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor predict_logits(const Tensor& batch) = 0;
  virtual int num_classes() const = 0;
};

// Where the feature tap sits relative to the classifier head.
enum class FeatureTap { global_pool, pre_flatten };
std::string to_string(FeatureTap tap);
FeatureTap parse_feature_tap(const std::string& text);

/// Backbone + linear classifier head. The tapped features are exactly the
/// head's input, so head_logits(features) reproduces the logits.
class Model : public Classifier {
 public:
  Model(std::string architecture_id, int num_classes, std::uint64_t seed, Sequential backbone,
        FeatureTap tap, Shape input_shape = {1, 3, 32, 32});

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  ForwardResult forward_with_features(const Tensor& batch, bool training);
  Tensor predict_logits(const Tensor& batch) override;
  Tensor head_logits(const Tensor& features) const;

  /// Backpropagates d_logits through the head, adds `d_features_extra` (if
  /// any) at the feature tap, and continues through the backbone.
  /// Requires a preceding training-mode forward; refuses on a frozen model.
  void backward(const Tensor& d_logits, const Tensor* d_features_extra = nullptr);

  void zero_grad();
  std::vector<NamedParameter> named_parameters();
  std::vector<NamedBuffer> named_buffers();
  std::vector<Parameter*> parameters();

  std::size_t parameter_count();
  std::uint64_t parameter_checksum();

  const std::string& architecture_id() const { return architecture_id_; }
  int num_classes() const override { return num_classes_; }
  std::uint64_t seed() const { return seed_; }
  /// (1, C, H, W) extent of the tapped features for a single input image.
  const Shape& feature_shape() const { return feature_shape_; }
  const Shape& input_shape() const { return input_shape_; }
  FeatureTap feature_tap() const { return tap_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen) { frozen_ = frozen; }

  Linear& head() { return head_; }
  const Linear& head() const { return head_; }

 private:
  std::string architecture_id_;
  int num_classes_;
  std::uint64_t seed_;
  Sequential backbone_;
  Linear head_;
  FeatureTap tap_;
  Shape input_shape_;
  Shape feature_shape_;
  bool frozen_ = false;
};

/// Per-sample gradient of each sample's own cross-entropy w.r.t. the tapped
/// features, W^T (softmax(z) - onehot(y)), given the logits the head produced.
Tensor feature_gradient(const Linear& head, const Tensor& logits, std::span<const int> labels,
                        const Shape& feature_shape);

/// Runs an inference-mode forward and returns feature_gradient for it. No
/// parameter or running statistic changes.
Tensor penultimate_gradient(Model& model, const Tensor& batch, std::span<const int> labels);

}  // namespace dynkd::nn
