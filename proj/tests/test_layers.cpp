#include <doctest.h>

#include "dynkd/nn/layers.hpp"
#include "support.hpp"

using namespace dynkd;
using namespace dynkd::nn;
using dynkd::testing::finite_difference_error;
using dynkd::testing::random_tensor;

namespace {

// Checks dL/dx and every dL/dparam of L = <w, layer(x)> against central
// differences, with the layer in training mode.
void check_layer(Layer& layer, Shape in, std::uint64_t seed, real tol = 1e-5) {
  Rng rng(seed);
  layer.initialize(rng);
  Tensor x = random_tensor(in, seed + 1);
  const Tensor probe = random_tensor(layer.output_shape(in), seed + 2);
  auto loss = [&] {
    const Tensor y = layer.forward(x, true);
    real s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
    return s;
  };
  std::vector<NamedParameter> params;
  layer.collect_parameters("", params);
  for (auto& p : params) p.param->zero_grad();
  const Tensor y = layer.forward(x, true);
  CHECK(y.shape() == layer.output_shape(in));
  const Tensor dx = layer.backward(probe);
  CHECK(finite_difference_error(x, dx, loss, 48) < tol);
  for (auto& p : params) {
    CAPTURE(p.name);
    const Tensor g = p.param->grad;
    CHECK(finite_difference_error(p.param->value, g, loss, 48) < tol);
  }
}

}  // namespace

TEST_CASE("conv2d gradients") {
  Conv2d conv(3, 4, {3, 1, 1, 1});
  check_layer(conv, {2, 3, 5, 5}, 1);
  Conv2d strided(2, 3, {3, 2, 1, 1});
  check_layer(strided, {2, 2, 6, 6}, 2);
  Conv2d depthwise(4, 4, {3, 1, 1, 4});
  check_layer(depthwise, {2, 4, 5, 5}, 3);
}

TEST_CASE("batchnorm gradients in training mode") {
  BatchNorm2d bn(3);
  check_layer(bn, {4, 3, 3, 3}, 4);
}

TEST_CASE("activation, pooling and linear gradients") {
  Activation relu;
  check_layer(relu, {2, 3, 4, 4}, 5);
  Activation relu6(6.0);
  check_layer(relu6, {2, 3, 4, 4}, 6);
  MaxPool2d pool;
  check_layer(pool, {2, 3, 4, 4}, 7);
  GlobalAvgPool gap;
  check_layer(gap, {2, 3, 4, 4}, 8);
  Linear lin(12, 5);
  check_layer(lin, {3, 12, 1, 1}, 9);
}

TEST_CASE("sequential and residual gradients") {
  Sequential seq;
  seq.emplace<Conv2d>(2, 4, kernels::ConvGeometry{3, 1, 1, 1});
  seq.emplace<BatchNorm2d>(4);
  seq.emplace<Activation>();
  seq.emplace<MaxPool2d>();
  check_layer(seq, {3, 2, 4, 4}, 10);

  Sequential main, shortcut;
  main.emplace<Conv2d>(3, 5, kernels::ConvGeometry{3, 2, 1, 1});
  main.emplace<BatchNorm2d>(5);
  shortcut.emplace<Conv2d>(3, 5, kernels::ConvGeometry{1, 2, 0, 1});
  Residual res(std::move(main), std::move(shortcut), true);
  check_layer(res, {3, 3, 4, 4}, 11);

  Sequential id_main;
  id_main.emplace<Conv2d>(3, 3, kernels::ConvGeometry{3, 1, 1, 1});
  Residual identity(std::move(id_main), Sequential{}, false);
  check_layer(identity, {2, 3, 3, 3}, 12);
}

TEST_CASE("batchnorm running statistics and eval mode") {
  BatchNorm2d bn(2);
  Rng rng(1);
  bn.initialize(rng);
  Tensor x = random_tensor({8, 2, 3, 3}, 13, 3.0);
  for (auto& v : x.values()) v += 5.0;
  for (int i = 0; i < 200; ++i) bn.forward(x, true);
  // Running statistics converge to the batch statistics, so eval ~ train output.
  const Tensor train = bn.forward(x, true);
  const Tensor eval = bn.forward(x, false);
  CHECK(dynkd::testing::max_abs_diff(train, eval) < 0.05);
  std::vector<NamedBuffer> buffers;
  bn.collect_buffers("bn.", buffers);
  CHECK(buffers.size() == 2);
}

TEST_CASE("linear apply matches forward") {
  Linear lin(6, 3);
  Rng rng(2);
  lin.initialize(rng);
  const Tensor x = random_tensor({4, 6, 1, 1}, 14);
  CHECK(dynkd::testing::max_abs_diff(lin.apply(x), lin.forward(x, false)) == 0.0);
}
