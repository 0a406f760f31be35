#pragma once

// Compute kernels behind the network layers. Every kernel exists twice with the
// same signature: `reference` is a direct serial loop nest kept as the ground
// truth for tests, `parallel` is the OpenMP / GEMM implementation the layers
// call. Outputs are overwritten, never accumulated.

#include <vector>

#include "dynkd/tensor.hpp"

namespace dynkd::kernels {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int groups = 1;
};

// Output extent of a convolution with `out_channels` filters.
Shape conv_output_shape(const Shape& in, int out_channels, const ConvGeometry& g);

// Per-channel statistics saved by the training-mode batch norm forward.
struct BatchNormCache {
  std::vector<real> mean;
  std::vector<real> inv_std;
};

namespace reference {
// x (N,Cin,H,W), weight (Cout, Cin/groups, k, k) -> y (N,Cout,Ho,Wo)
void conv2d_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g, Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, const ConvGeometry& g,
                     Tensor& dx, Tensor& dweight);

// x (N,In,1,1), weight (Out,In,1,1), bias (Out,1,1,1) -> y (N,Out,1,1)
void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dx,
                     Tensor& dweight, Tensor& dbias);

void batchnorm_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps,
                             Tensor& y, BatchNormCache& cache);
void batchnorm_forward_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            const Tensor& running_mean, const Tensor& running_var, real eps,
                            Tensor& y);
void batchnorm_backward(const Tensor& x, const Tensor& gamma, const BatchNormCache& cache,
                        const Tensor& dy, Tensor& dx, Tensor& dgamma, Tensor& dbeta);

// 2x2 stride-2 max pooling; argmax holds the flat input index of each output.
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::size_t>& argmax);
void maxpool2_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                       const Tensor& dy, Tensor& dx);

// Adaptive average pooling to (out_h, out_w) using floor/ceil bin edges.
void adaptive_avgpool_forward(const Tensor& x, int out_h, int out_w, Tensor& y);
void adaptive_avgpool_backward(const Shape& x_shape, const Tensor& dy, Tensor& dx);
}  // namespace reference

namespace parallel {
// x (N,Cin,H,W), weight (Cout, Cin/groups, k, k) -> y (N,Cout,Ho,Wo)
void conv2d_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g, Tensor& y);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, const ConvGeometry& g,
                     Tensor& dx, Tensor& dweight);

// x (N,In,1,1), weight (Out,In,1,1), bias (Out,1,1,1) -> y (N,Out,1,1)
void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dx,
                     Tensor& dweight, Tensor& dbias);

void batchnorm_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps,
                             Tensor& y, BatchNormCache& cache);
void batchnorm_forward_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            const Tensor& running_mean, const Tensor& running_var, real eps,
                            Tensor& y);
void batchnorm_backward(const Tensor& x, const Tensor& gamma, const BatchNormCache& cache,
                        const Tensor& dy, Tensor& dx, Tensor& dgamma, Tensor& dbeta);

// 2x2 stride-2 max pooling; argmax holds the flat input index of each output.
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::size_t>& argmax);
void maxpool2_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                       const Tensor& dy, Tensor& dx);

// Adaptive average pooling to (out_h, out_w) using floor/ceil bin edges.
void adaptive_avgpool_forward(const Tensor& x, int out_h, int out_w, Tensor& y);
void adaptive_avgpool_backward(const Shape& x_shape, const Tensor& dy, Tensor& dx);
}  // namespace parallel

// Bin [start, end) of adaptive pooling output index i over an input of length n.
inline int adaptive_bin_start(int i, int out, int n) { return (i * n) / out; }
inline int adaptive_bin_end(int i, int out, int n) { return ((i + 1) * n + out - 1) / out; }

}  // namespace dynkd::kernels
