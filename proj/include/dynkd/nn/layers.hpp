#pragma once

// Minimal layer set for the model zoo. Each layer caches what its backward
// pass needs during forward(); backward() returns dL/dinput and accumulates
// parameter gradients (+=). A layer instance serves one forward/backward pair
// at a time.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dynkd/kernels.hpp"
#include "dynkd/parameter.hpp"
#include "dynkd/tensor.hpp"

namespace dynkd::nn {

using Rng = std::mt19937_64;

struct NamedParameter {
  std::string name;
  Parameter* param;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::string kind() const = 0;
  virtual void initialize(Rng& /*rng*/) {}
  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<NamedParameter>& /*out*/) {}
  virtual void collect_buffers(const std::string& /*prefix*/, std::vector<NamedBuffer>& /*out*/) {}
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, kernels::ConvGeometry geometry);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "conv2d"; }
  void initialize(Rng& rng) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Parameter& weight() { return weight_; }

 private:
  int in_channels_;
  int out_channels_;
  kernels::ConvGeometry geometry_;
  Parameter weight_;
  Tensor input_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, real momentum = 0.1, real eps = 1e-5);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string kind() const override { return "batchnorm2d"; }
  void initialize(Rng& rng) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;

 private:
  int channels_;
  real momentum_;
  real eps_;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  Tensor input_;
  kernels::BatchNormCache cache_;
  bool cached_training_ = false;
};

// ReLU, clipped to `cap` when cap > 0 (ReLU6 uses cap = 6).
class Activation : public Layer {
 public:
  explicit Activation(real cap = 0.0) : cap_(cap) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string kind() const override { return cap_ > 0.0 ? "relu6" : "relu"; }

 private:
  real cap_;
  Tensor input_;
};

class MaxPool2d : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, in.h / 2, in.w / 2}; }
  std::string kind() const override { return "maxpool2"; }

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }
  std::string kind() const override { return "global_avgpool"; }

 private:
  Shape input_shape_;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override { return {in.n, out_features_, 1, 1}; }
  std::string kind() const override { return "linear"; }
  void initialize(Rng& rng) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  // Stateless evaluation, used to replay the head on stored features.
  Tensor apply(const Tensor& x) const;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }
  int in_features() const { return in_features_; }
  int out_features() const { return out_features_; }

 private:
  int in_features_;
  int out_features_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential& add(std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  Sequential& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "sequential"; }
  void initialize(Rng& rng) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// y = act(main(x) + shortcut(x)); an empty shortcut is the identity.
class Residual : public Layer {
 public:
  Residual(Sequential main, Sequential shortcut, bool activate_output);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& dy) override;
  Shape output_shape(const Shape& in) const override { return main_.output_shape(in); }
  std::string kind() const override { return "residual"; }
  void initialize(Rng& rng) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;

 private:
  Sequential main_;
  Sequential shortcut_;
  bool activate_output_;
  Activation activation_;
};

}  // namespace dynkd::nn
