#include "dynkd/nn/layers.hpp"

#include <cmath>

#include "dynkd/error.hpp"

namespace dynkd::nn {

namespace {

void accumulate(Tensor& into, const Tensor& delta) {
  real* dst = into.data();
  const real* src = delta.data();
  for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

}  // namespace

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, kernels::ConvGeometry geometry)
    : in_channels_(in_channels), out_channels_(out_channels), geometry_(geometry) {
  if (in_channels % geometry.groups != 0 || out_channels % geometry.groups != 0) {
    throw ShapeError("conv channels not divisible by groups");
  }
  weight_ = Parameter("weight", Tensor({out_channels, in_channels / geometry.groups,
                                        geometry.kernel, geometry.kernel}));
}

Tensor Conv2d::forward(const Tensor& x, bool training) {
  if (x.shape().c != in_channels_) {
    throw ShapeError("conv2d expects " + std::to_string(in_channels_) + " channels, got " +
                     x.shape().str());
  }
  if (training) input_ = x;
  Tensor y;
  kernels::parallel::conv2d_forward(x, weight_.value, geometry_, y);
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  Tensor dx, dw;
  kernels::parallel::conv2d_backward(input_, weight_.value, dy, geometry_, dx, dw);
  accumulate(weight_.grad, dw);
  return dx;
}

Shape Conv2d::output_shape(const Shape& in) const {
  return kernels::conv_output_shape(in, out_channels_, geometry_);
}

void Conv2d::initialize(Rng& rng) {
  // He initialization over the fan-out of one filter position.
  const real fan_out = static_cast<real>(out_channels_ / geometry_.groups) * geometry_.kernel *
                       geometry_.kernel;
  std::normal_distribution<real> dist(0.0, std::sqrt(2.0 / fan_out));
  for (auto& v : weight_.value.values()) v = dist(rng);
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
}

// --- BatchNorm2d ------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels, real momentum, real eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_("gamma", Tensor({channels, 1, 1, 1}, 1.0), false),
      beta_("beta", Tensor({channels, 1, 1, 1}), false),
      running_mean_({channels, 1, 1, 1}),
      running_var_({channels, 1, 1, 1}, 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.shape().c != channels_) throw ShapeError("batchnorm channel mismatch: " + x.shape().str());
  Tensor y;
  cached_training_ = training;
  if (!training) {
    kernels::parallel::batchnorm_forward_eval(x, gamma_.value, beta_.value, running_mean_,
                                              running_var_, eps_, y);
    return y;
  }
  input_ = x;
  kernels::parallel::batchnorm_forward_train(x, gamma_.value, beta_.value, eps_, y, cache_);
  const real count = static_cast<real>(x.shape().n) * x.shape().plane();
  const real unbias = count > 1 ? count / (count - 1) : 1.0;
  for (int c = 0; c < channels_; ++c) {
    const real var = 1.0 / (cache_.inv_std[c] * cache_.inv_std[c]) - eps_;
    running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * cache_.mean[c];
    running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var * unbias;
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  if (!cached_training_) throw Error("batchnorm backward requires a training-mode forward");
  Tensor dx, dgamma, dbeta;
  kernels::parallel::batchnorm_backward(input_, gamma_.value, cache_, dy, dx, dgamma, dbeta);
  accumulate(gamma_.grad, dgamma);
  accumulate(beta_.grad, dbeta);
  return dx;
}

void BatchNorm2d::initialize(Rng& /*rng*/) {
  gamma_.value.fill(1.0);
  beta_.value.fill(0.0);
  running_mean_.fill(0.0);
  running_var_.fill(1.0);
}

void BatchNorm2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "gamma", &gamma_});
  out.push_back({prefix + "beta", &beta_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

// --- Activation -------------------------------------------------------------

Tensor Activation::forward(const Tensor& x, bool training) {
  if (training) input_ = x;
  Tensor y(x.shape());
  const std::size_t n = x.size();
  const real cap = cap_;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    real v = x[i] > 0.0 ? x[i] : 0.0;
    if (cap > 0.0 && v > cap) v = cap;
    y[i] = v;
  }
  return y;
}

Tensor Activation::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  const std::size_t n = dy.size();
  const real cap = cap_;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const real v = input_[i];
    const bool pass = v > 0.0 && (cap <= 0.0 || v < cap);
    dx[i] = pass ? dy[i] : 0.0;
  }
  return dx;
}

// --- Pooling ----------------------------------------------------------------

Tensor MaxPool2d::forward(const Tensor& x, bool /*training*/) {
  input_shape_ = x.shape();
  Tensor y;
  kernels::parallel::maxpool2_forward(x, y, argmax_);
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
  Tensor dx;
  kernels::parallel::maxpool2_backward(input_shape_, argmax_, dy, dx);
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool /*training*/) {
  input_shape_ = x.shape();
  Tensor y;
  kernels::parallel::adaptive_avgpool_forward(x, 1, 1, y);
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx;
  kernels::parallel::adaptive_avgpool_backward(input_shape_, dy, dx);
  return dx;
}

// --- Linear -----------------------------------------------------------------

Linear::Linear(int in_features, int out_features)
    : in_features_(in_features),
      out_features_(out_features),
      weight_("weight", Tensor({out_features, in_features, 1, 1})),
      bias_("bias", Tensor({out_features, 1, 1, 1}), false) {}

Tensor Linear::apply(const Tensor& x) const {
  if (static_cast<int>(x.shape().per_sample()) != in_features_) {
    throw ShapeError("linear expects " + std::to_string(in_features_) + " features, got " +
                     x.shape().str());
  }
  Tensor y;
  kernels::parallel::linear_forward(x, weight_.value, bias_.value, y);
  return y;
}

Tensor Linear::forward(const Tensor& x, bool training) {
  if (training) input_ = x;
  return apply(x);
}

Tensor Linear::backward(const Tensor& dy) {
  Tensor dx, dw, db;
  kernels::parallel::linear_backward(input_, weight_.value, dy, dx, dw, db);
  accumulate(weight_.grad, dw);
  accumulate(bias_.grad, db);
  return dx;
}

void Linear::initialize(Rng& rng) {
  const real bound = 1.0 / std::sqrt(static_cast<real>(in_features_));
  std::uniform_real_distribution<real> dist(-bound, bound);
  for (auto& v : weight_.value.values()) v = dist(rng);
  for (auto& v : bias_.value.values()) v = dist(rng);
}

void Linear::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

// --- Sequential -------------------------------------------------------------

Sequential& Sequential::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, training);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Shape Sequential::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& layer : layers_) s = layer->output_shape(s);
  return s;
}

void Sequential::initialize(Rng& rng) {
  for (auto& layer : layers_) layer->initialize(rng);
}

void Sequential::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_parameters(prefix + std::to_string(i) + ".", out);
  }
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_buffers(prefix + std::to_string(i) + ".", out);
  }
}

// --- Residual ---------------------------------------------------------------

Residual::Residual(Sequential main, Sequential shortcut, bool activate_output)
    : main_(std::move(main)), shortcut_(std::move(shortcut)), activate_output_(activate_output) {}

Tensor Residual::forward(const Tensor& x, bool training) {
  Tensor y = main_.forward(x, training);
  const Tensor skip = shortcut_.empty() ? x : shortcut_.forward(x, training);
  if (!(y.shape() == skip.shape())) {
    throw ShapeError("residual branch shapes differ: " + y.shape().str() + " vs " +
                     skip.shape().str());
  }
  accumulate(y, skip);
  return activate_output_ ? activation_.forward(y, training) : y;
}

Tensor Residual::backward(const Tensor& dy) {
  const Tensor g = activate_output_ ? activation_.backward(dy) : dy;
  Tensor dx = main_.backward(g);
  if (shortcut_.empty()) {
    accumulate(dx, g);
  } else {
    accumulate(dx, shortcut_.backward(g));
  }
  return dx;
}

void Residual::initialize(Rng& rng) {
  main_.initialize(rng);
  shortcut_.initialize(rng);
}

void Residual::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  main_.collect_parameters(prefix + "main.", out);
  shortcut_.collect_parameters(prefix + "shortcut.", out);
}

void Residual::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  main_.collect_buffers(prefix + "main.", out);
  shortcut_.collect_buffers(prefix + "shortcut.", out);
}

}  // namespace dynkd::nn
