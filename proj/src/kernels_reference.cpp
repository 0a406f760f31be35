#include <cmath>
#include <limits>

#include "dynkd/error.hpp"
#include "dynkd/kernels.hpp"

namespace dynkd::kernels {

Shape conv_output_shape(const Shape& in, int out_channels, const ConvGeometry& g) {
  if (g.kernel < 1 || g.stride < 1 || g.padding < 0 || g.groups < 1) {
    throw ShapeError("invalid convolution geometry");
  }
  if (in.c % g.groups != 0 || out_channels % g.groups != 0) {
    throw ShapeError("channel counts not divisible by groups");
  }
  const int ho = (in.h + 2 * g.padding - g.kernel) / g.stride + 1;
  const int wo = (in.w + 2 * g.padding - g.kernel) / g.stride + 1;
  if (ho < 1 || wo < 1) {
    throw ShapeError("convolution output would be empty for input " + in.str());
  }
  return {in.n, out_channels, ho, wo};
}

namespace reference {

namespace {

void check_conv(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  const Shape& ws = weight.shape();
  if (ws.c * g.groups != x.shape().c || ws.h != g.kernel || ws.w != g.kernel) {
    throw ShapeError("conv weight " + ws.str() + " incompatible with input " + x.shape().str());
  }
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g, Tensor& y) {
  check_conv(x, weight, g);
  const Shape xs = x.shape();
  const int cout = weight.shape().n;
  const Shape ys = conv_output_shape(xs, cout, g);
  y = Tensor(ys);
  const int cin_g = xs.c / g.groups;
  const int cout_g = cout / g.groups;
  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      const int group = co / cout_g;
      for (int oh = 0; oh < ys.h; ++oh) {
        for (int ow = 0; ow < ys.w; ++ow) {
          real acc = 0.0;
          for (int ci = 0; ci < cin_g; ++ci) {
            for (int kh = 0; kh < g.kernel; ++kh) {
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int ih = oh * g.stride - g.padding + kh;
                const int iw = ow * g.stride - g.padding + kw;
                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                acc += weight.at(co, ci, kh, kw) * x.at(n, group * cin_g + ci, ih, iw);
              }
            }
          }
          y.at(n, co, oh, ow) = acc;
        }
      }
    }
  }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, const ConvGeometry& g,
                     Tensor& dx, Tensor& dweight) {
  check_conv(x, weight, g);
  const Shape xs = x.shape();
  const Shape ys = dy.shape();
  const int cout = weight.shape().n;
  const int cin_g = xs.c / g.groups;
  const int cout_g = cout / g.groups;
  dx = Tensor(xs);
  dweight = Tensor(weight.shape());
  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      const int group = co / cout_g;
      for (int oh = 0; oh < ys.h; ++oh) {
        for (int ow = 0; ow < ys.w; ++ow) {
          const real grad = dy.at(n, co, oh, ow);
          for (int ci = 0; ci < cin_g; ++ci) {
            for (int kh = 0; kh < g.kernel; ++kh) {
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int ih = oh * g.stride - g.padding + kh;
                const int iw = ow * g.stride - g.padding + kw;
                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                const int cin = group * cin_g + ci;
                dweight.at(co, ci, kh, kw) += grad * x.at(n, cin, ih, iw);
                dx.at(n, cin, ih, iw) += grad * weight.at(co, ci, kh, kw);
              }
            }
          }
        }
      }
    }
  }
}

void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y) {
  const int batch = x.shape().n;
  const int in = static_cast<int>(x.shape().per_sample());
  const int out = weight.shape().n;
  if (static_cast<int>(weight.shape().per_sample()) != in) {
    throw ShapeError("linear weight " + weight.shape().str() + " vs input " + x.shape().str());
  }
  y = Tensor({batch, out, 1, 1});
  for (int n = 0; n < batch; ++n) {
    for (int o = 0; o < out; ++o) {
      real acc = bias[o];
      for (int i = 0; i < in; ++i) acc += weight[o * in + i] * x[n * in + i];
      y[n * out + o] = acc;
    }
  }
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dx,
                     Tensor& dweight, Tensor& dbias) {
  const int batch = x.shape().n;
  const int in = static_cast<int>(x.shape().per_sample());
  const int out = weight.shape().n;
  dx = Tensor(x.shape());
  dweight = Tensor(weight.shape());
  dbias = Tensor({out, 1, 1, 1});
  for (int n = 0; n < batch; ++n) {
    for (int o = 0; o < out; ++o) {
      const real grad = dy[n * out + o];
      dbias[o] += grad;
      for (int i = 0; i < in; ++i) {
        dweight[o * in + i] += grad * x[n * in + i];
        dx[n * in + i] += grad * weight[o * in + i];
      }
    }
  }
}

void batchnorm_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps,
                             Tensor& y, BatchNormCache& cache) {
  const Shape s = x.shape();
  const real count = static_cast<real>(s.n) * s.h * s.w;
  y = Tensor(s);
  cache.mean.assign(s.c, 0.0);
  cache.inv_std.assign(s.c, 0.0);
  for (int c = 0; c < s.c; ++c) {
    real sum = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) sum += x.at(n, c, h, w);
    const real mean = sum / count;
    real sq = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const real d = x.at(n, c, h, w) - mean;
          sq += d * d;
        }
    const real inv_std = 1.0 / std::sqrt(sq / count + eps);
    cache.mean[c] = mean;
    cache.inv_std[c] = inv_std;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          y.at(n, c, h, w) = gamma[c] * (x.at(n, c, h, w) - mean) * inv_std + beta[c];
  }
}

void batchnorm_forward_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            const Tensor& running_mean, const Tensor& running_var, real eps,
                            Tensor& y) {
  const Shape s = x.shape();
  y = Tensor(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real inv_std = 1.0 / std::sqrt(running_var[c] + eps);
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          y.at(n, c, h, w) = gamma[c] * (x.at(n, c, h, w) - running_mean[c]) * inv_std + beta[c];
    }
}

void batchnorm_backward(const Tensor& x, const Tensor& gamma, const BatchNormCache& cache,
                        const Tensor& dy, Tensor& dx, Tensor& dgamma, Tensor& dbeta) {
  const Shape s = x.shape();
  const real count = static_cast<real>(s.n) * s.h * s.w;
  dx = Tensor(s);
  dgamma = Tensor({s.c, 1, 1, 1});
  dbeta = Tensor({s.c, 1, 1, 1});
  for (int c = 0; c < s.c; ++c) {
    real sum_dy = 0.0;
    real sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const real xhat = (x.at(n, c, h, w) - cache.mean[c]) * cache.inv_std[c];
          sum_dy += dy.at(n, c, h, w);
          sum_dy_xhat += dy.at(n, c, h, w) * xhat;
        }
    dgamma[c] = sum_dy_xhat;
    dbeta[c] = sum_dy;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w) {
          const real xhat = (x.at(n, c, h, w) - cache.mean[c]) * cache.inv_std[c];
          dx.at(n, c, h, w) = gamma[c] * cache.inv_std[c] / count *
                              (count * dy.at(n, c, h, w) - sum_dy - xhat * sum_dy_xhat);
        }
  }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::size_t>& argmax) {
  const Shape s = x.shape();
  const Shape ys{s.n, s.c, s.h / 2, s.w / 2};
  if (ys.h < 1 || ys.w < 1) throw ShapeError("max pooling input too small: " + s.str());
  y = Tensor(ys);
  argmax.assign(ys.count(), 0);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int oh = 0; oh < ys.h; ++oh)
        for (int ow = 0; ow < ys.w; ++ow) {
          real best = -std::numeric_limits<real>::infinity();
          std::size_t best_idx = 0;
          for (int kh = 0; kh < 2; ++kh)
            for (int kw = 0; kw < 2; ++kw) {
              const int ih = 2 * oh + kh;
              const int iw = 2 * ow + kw;
              const std::size_t idx = ((static_cast<std::size_t>(n) * s.c + c) * s.h + ih) * s.w + iw;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          const std::size_t o = ((static_cast<std::size_t>(n) * s.c + c) * ys.h + oh) * ys.w + ow;
          y[o] = best;
          argmax[o] = best_idx;
        }
}

void maxpool2_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                       const Tensor& dy, Tensor& dx) {
  dx = Tensor(x_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
}

void adaptive_avgpool_forward(const Tensor& x, int out_h, int out_w, Tensor& y) {
  const Shape s = x.shape();
  if (out_h < 1 || out_w < 1 || out_h > s.h || out_w > s.w) {
    throw ShapeError("adaptive pooling target larger than input " + s.str());
  }
  y = Tensor({s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int oh = 0; oh < out_h; ++oh)
        for (int ow = 0; ow < out_w; ++ow) {
          const int h0 = adaptive_bin_start(oh, out_h, s.h), h1 = adaptive_bin_end(oh, out_h, s.h);
          const int w0 = adaptive_bin_start(ow, out_w, s.w), w1 = adaptive_bin_end(ow, out_w, s.w);
          real acc = 0.0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) acc += x.at(n, c, h, w);
          y.at(n, c, oh, ow) = acc / static_cast<real>((h1 - h0) * (w1 - w0));
        }
}

void adaptive_avgpool_backward(const Shape& x_shape, const Tensor& dy, Tensor& dx) {
  const Shape ys = dy.shape();
  dx = Tensor(x_shape);
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c)
      for (int oh = 0; oh < ys.h; ++oh)
        for (int ow = 0; ow < ys.w; ++ow) {
          const int h0 = adaptive_bin_start(oh, ys.h, x_shape.h);
          const int h1 = adaptive_bin_end(oh, ys.h, x_shape.h);
          const int w0 = adaptive_bin_start(ow, ys.w, x_shape.w);
          const int w1 = adaptive_bin_end(ow, ys.w, x_shape.w);
          const real share = dy.at(n, c, oh, ow) / static_cast<real>((h1 - h0) * (w1 - w0));
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) dx.at(n, c, h, w) += share;
        }
}

}  // namespace reference
}  // namespace dynkd::kernels
