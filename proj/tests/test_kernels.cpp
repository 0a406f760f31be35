#include <doctest.h>

#include "dynkd/kernels.hpp"
#include "support.hpp"

using namespace dynkd;
using dynkd::testing::max_abs_diff;
using dynkd::testing::random_tensor;
namespace ref = dynkd::kernels::reference;
namespace par = dynkd::kernels::parallel;

namespace {

constexpr real kTol = 1e-10;

void check_conv(Shape in, int cout, kernels::ConvGeometry g) {
  CAPTURE(in.str());
  CAPTURE(cout);
  CAPTURE(g.groups);
  CAPTURE(g.stride);
  const Tensor x = random_tensor(in, 1);
  const Tensor w = random_tensor({cout, in.c / g.groups, g.kernel, g.kernel}, 2);
  Tensor y_ref, y_par;
  ref::conv2d_forward(x, w, g, y_ref);
  par::conv2d_forward(x, w, g, y_par);
  REQUIRE(y_ref.shape() == y_par.shape());
  CHECK(max_abs_diff(y_ref, y_par) < kTol);

  const Tensor dy = random_tensor(y_ref.shape(), 3);
  Tensor dx_ref, dw_ref, dx_par, dw_par;
  ref::conv2d_backward(x, w, dy, g, dx_ref, dw_ref);
  par::conv2d_backward(x, w, dy, g, dx_par, dw_par);
  CHECK(max_abs_diff(dx_ref, dx_par) < kTol);
  CHECK(max_abs_diff(dw_ref, dw_par) < kTol);
}

}  // namespace

TEST_CASE("conv2d: parallel matches reference") {
  check_conv({3, 3, 8, 8}, 5, {3, 1, 1, 1});
  check_conv({2, 4, 9, 7}, 6, {3, 2, 1, 1});
  check_conv({2, 4, 6, 6}, 4, {1, 1, 0, 1});
  check_conv({2, 6, 8, 8}, 6, {3, 1, 1, 6});  // depthwise
  check_conv({2, 6, 8, 8}, 6, {3, 2, 1, 6});
  check_conv({2, 4, 8, 8}, 6, {3, 1, 1, 2});  // grouped fallback
}

TEST_CASE("conv2d: output shape") {
  const Shape s = kernels::conv_output_shape({4, 3, 32, 32}, 16, {3, 2, 1, 1});
  CHECK(s == Shape{4, 16, 16, 16});
}

TEST_CASE("conv2d: single-pixel kernel is a channel mix") {
  Tensor x({1, 2, 1, 1}, std::vector<real>{2.0, 3.0});
  Tensor w({1, 2, 1, 1}, std::vector<real>{1.0, 10.0});
  Tensor y;
  ref::conv2d_forward(x, w, {1, 1, 0, 1}, y);
  CHECK(y[0] == doctest::Approx(32.0));
}

TEST_CASE("linear: parallel matches reference") {
  const Tensor x = random_tensor({7, 13, 1, 1}, 4);
  const Tensor w = random_tensor({5, 13, 1, 1}, 5);
  const Tensor b = random_tensor({5, 1, 1, 1}, 6);
  Tensor y_ref, y_par;
  ref::linear_forward(x, w, b, y_ref);
  par::linear_forward(x, w, b, y_par);
  CHECK(max_abs_diff(y_ref, y_par) < kTol);
  const Tensor dy = random_tensor(y_ref.shape(), 7);
  Tensor dx1, dw1, db1, dx2, dw2, db2;
  ref::linear_backward(x, w, dy, dx1, dw1, db1);
  par::linear_backward(x, w, dy, dx2, dw2, db2);
  CHECK(max_abs_diff(dx1, dx2) < kTol);
  CHECK(max_abs_diff(dw1, dw2) < kTol);
  CHECK(max_abs_diff(db1, db2) < kTol);
}

TEST_CASE("batchnorm: parallel matches reference") {
  const Tensor x = random_tensor({4, 3, 5, 5}, 8, 2.0);
  const Tensor gamma = random_tensor({3, 1, 1, 1}, 9);
  const Tensor beta = random_tensor({3, 1, 1, 1}, 10);
  Tensor y1, y2;
  kernels::BatchNormCache c1, c2;
  ref::batchnorm_forward_train(x, gamma, beta, 1e-5, y1, c1);
  par::batchnorm_forward_train(x, gamma, beta, 1e-5, y2, c2);
  CHECK(max_abs_diff(y1, y2) < kTol);
  for (int c = 0; c < 3; ++c) {
    CHECK(c1.mean[c] == doctest::Approx(c2.mean[c]).epsilon(1e-12));
    CHECK(c1.inv_std[c] == doctest::Approx(c2.inv_std[c]).epsilon(1e-12));
  }
  const Tensor dy = random_tensor(x.shape(), 11);
  Tensor dx1, dg1, db1, dx2, dg2, db2;
  ref::batchnorm_backward(x, gamma, c1, dy, dx1, dg1, db1);
  par::batchnorm_backward(x, gamma, c2, dy, dx2, dg2, db2);
  CHECK(max_abs_diff(dx1, dx2) < kTol);
  CHECK(max_abs_diff(dg1, dg2) < kTol);
  CHECK(max_abs_diff(db1, db2) < kTol);

  Tensor rm = random_tensor({3, 1, 1, 1}, 12);
  Tensor rv({3, 1, 1, 1}, 1.5);
  ref::batchnorm_forward_eval(x, gamma, beta, rm, rv, 1e-5, y1);
  par::batchnorm_forward_eval(x, gamma, beta, rm, rv, 1e-5, y2);
  CHECK(max_abs_diff(y1, y2) < kTol);
}

TEST_CASE("maxpool and adaptive pooling: parallel matches reference") {
  const Tensor x = random_tensor({3, 4, 8, 6}, 13);
  Tensor y1, y2;
  std::vector<std::size_t> a1, a2;
  ref::maxpool2_forward(x, y1, a1);
  par::maxpool2_forward(x, y2, a2);
  CHECK(max_abs_diff(y1, y2) == 0.0);
  CHECK(a1 == a2);
  const Tensor dy = random_tensor(y1.shape(), 14);
  Tensor dx1, dx2;
  ref::maxpool2_backward(x.shape(), a1, dy, dx1);
  par::maxpool2_backward(x.shape(), a2, dy, dx2);
  CHECK(max_abs_diff(dx1, dx2) == 0.0);

  for (auto [oh, ow] : {std::pair{1, 1}, std::pair{3, 4}, std::pair{5, 5}}) {
    ref::adaptive_avgpool_forward(x, oh, ow, y1);
    par::adaptive_avgpool_forward(x, oh, ow, y2);
    CHECK(max_abs_diff(y1, y2) < kTol);
    const Tensor d = random_tensor(y1.shape(), 15);
    ref::adaptive_avgpool_backward(x.shape(), d, dx1);
    par::adaptive_avgpool_backward(x.shape(), d, dx2);
    CHECK(max_abs_diff(dx1, dx2) < kTol);
  }
}

TEST_CASE("adaptive pooling to 1x1 is the spatial mean") {
  Tensor x({1, 1, 2, 2}, std::vector<real>{1, 2, 3, 6});
  Tensor y;
  ref::adaptive_avgpool_forward(x, 1, 1, y);
  CHECK(y[0] == doctest::Approx(3.0));
}
