#include <omp.h>

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <limits>

#include "dynkd/error.hpp"
#include "dynkd/kernels.hpp"

namespace dynkd::kernels::parallel {

namespace {

using Matrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

bool is_depthwise(const Shape& xs, int cout, const ConvGeometry& g) {
  return g.groups > 1 && g.groups == xs.c && cout == xs.c;
}

// Lowers the whole batch into one (Cin*k*k) x (N*Ho*Wo) matrix.
Matrix im2col(const Tensor& x, const ConvGeometry& g, const Shape& ys) {
  const Shape xs = x.shape();
  const int k = g.kernel;
  const std::size_t plane = ys.plane();
  const std::size_t cols = static_cast<std::size_t>(xs.n) * plane;
  Matrix col(static_cast<Eigen::Index>(xs.c) * k * k, static_cast<Eigen::Index>(cols));
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < xs.n; ++n) {
    for (int ci = 0; ci < xs.c; ++ci) {
      const real* src = x.data() + (static_cast<std::size_t>(n) * xs.c + ci) * xs.plane();
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          real* dst = col.data() + ((static_cast<std::size_t>(ci) * k + kh) * k + kw) * cols +
                      n * plane;
          for (int oh = 0; oh < ys.h; ++oh) {
            const int ih = oh * g.stride - g.padding + kh;
            for (int ow = 0; ow < ys.w; ++ow) {
              const int iw = ow * g.stride - g.padding + kw;
              const bool inside = ih >= 0 && ih < xs.h && iw >= 0 && iw < xs.w;
              dst[oh * ys.w + ow] = inside ? src[ih * xs.w + iw] : 0.0;
            }
          }
        }
      }
    }
  }
  return col;
}

void depthwise_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g, Tensor& y) {
  const Shape xs = x.shape();
  const Shape ys = y.shape();
  const int k = g.kernel;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const real* src = x.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
      const real* wk = weight.data() + static_cast<std::size_t>(c) * k * k;
      real* dst = y.data() + (static_cast<std::size_t>(n) * ys.c + c) * ys.plane();
      for (int oh = 0; oh < ys.h; ++oh) {
        for (int ow = 0; ow < ys.w; ++ow) {
          real acc = 0.0;
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= xs.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * g.stride - g.padding + kw;
              if (iw < 0 || iw >= xs.w) continue;
              acc += wk[kh * k + kw] * src[ih * xs.w + iw];
            }
          }
          dst[oh * ys.w + ow] = acc;
        }
      }
    }
  }
}

void depthwise_backward(const Tensor& x, const Tensor& weight, const Tensor& dy,
                        const ConvGeometry& g, Tensor& dx, Tensor& dweight) {
  const Shape xs = x.shape();
  const Shape ys = dy.shape();
  const int k = g.kernel;
  // Channel-major so each thread owns one filter's gradient.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < xs.c; ++c) {
    const real* wk = weight.data() + static_cast<std::size_t>(c) * k * k;
    real* dwk = dweight.data() + static_cast<std::size_t>(c) * k * k;
    for (int n = 0; n < xs.n; ++n) {
      const real* src = x.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
      real* dsrc = dx.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
      const real* grad = dy.data() + (static_cast<std::size_t>(n) * ys.c + c) * ys.plane();
      for (int oh = 0; oh < ys.h; ++oh) {
        for (int ow = 0; ow < ys.w; ++ow) {
          const real gv = grad[oh * ys.w + ow];
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= xs.h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * g.stride - g.padding + kw;
              if (iw < 0 || iw >= xs.w) continue;
              dwk[kh * k + kw] += gv * src[ih * xs.w + iw];
              dsrc[ih * xs.w + iw] += gv * wk[kh * k + kw];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const Tensor& x, const Tensor& weight, const ConvGeometry& g, Tensor& y) {
  const Shape xs = x.shape();
  const int cout = weight.shape().n;
  if (weight.shape().c * g.groups != xs.c || weight.shape().h != g.kernel) {
    throw ShapeError("conv weight " + weight.shape().str() + " incompatible with input " +
                     xs.str());
  }
  const Shape ys = conv_output_shape(xs, cout, g);
  if (g.groups != 1) {
    if (!is_depthwise(xs, cout, g)) {
      reference::conv2d_forward(x, weight, g, y);
      return;
    }
    y = Tensor(ys);
    depthwise_forward(x, weight, g, y);
    return;
  }
  const Matrix col = im2col(x, g, ys);
  const ConstMatrixMap w(weight.data(), cout, col.rows());
  const Matrix out = w * col;
  y = Tensor(ys);
  const std::size_t plane = ys.plane();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < ys.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      std::memcpy(y.data() + (static_cast<std::size_t>(n) * cout + co) * plane,
                  out.data() + static_cast<std::size_t>(co) * out.cols() + n * plane,
                  plane * sizeof(real));
    }
  }
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, const ConvGeometry& g,
                     Tensor& dx, Tensor& dweight) {
  const Shape xs = x.shape();
  const Shape ys = dy.shape();
  const int cout = weight.shape().n;
  if (g.groups != 1) {
    if (!is_depthwise(xs, cout, g)) {
      reference::conv2d_backward(x, weight, dy, g, dx, dweight);
      return;
    }
    dx = Tensor(xs);
    dweight = Tensor(weight.shape());
    depthwise_backward(x, weight, dy, g, dx, dweight);
    return;
  }
  const int k = g.kernel;
  const std::size_t plane = ys.plane();
  const std::size_t cols = static_cast<std::size_t>(ys.n) * plane;
  Matrix grad(cout, static_cast<Eigen::Index>(cols));
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < ys.n; ++n) {
    for (int co = 0; co < cout; ++co) {
      std::memcpy(grad.data() + static_cast<std::size_t>(co) * cols + n * plane,
                  dy.data() + (static_cast<std::size_t>(n) * cout + co) * plane,
                  plane * sizeof(real));
    }
  }
  const Matrix col = im2col(x, g, ys);
  const ConstMatrixMap w(weight.data(), cout, col.rows());
  dweight = Tensor(weight.shape());
  MatrixMap dw(dweight.data(), cout, col.rows());
  dw.noalias() = grad * col.transpose();
  const Matrix dcol = w.transpose() * grad;

  dx = Tensor(xs);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < xs.n; ++n) {
    for (int ci = 0; ci < xs.c; ++ci) {
      real* dst = dx.data() + (static_cast<std::size_t>(n) * xs.c + ci) * xs.plane();
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const real* src = dcol.data() + ((static_cast<std::size_t>(ci) * k + kh) * k + kw) * cols +
                            n * plane;
          for (int oh = 0; oh < ys.h; ++oh) {
            const int ih = oh * g.stride - g.padding + kh;
            if (ih < 0 || ih >= xs.h) continue;
            for (int ow = 0; ow < ys.w; ++ow) {
              const int iw = ow * g.stride - g.padding + kw;
              if (iw < 0 || iw >= xs.w) continue;
              dst[ih * xs.w + iw] += src[oh * ys.w + ow];
            }
          }
        }
      }
    }
  }
}

void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y) {
  const int batch = x.shape().n;
  const auto in = static_cast<Eigen::Index>(x.shape().per_sample());
  const int out = weight.shape().n;
  if (static_cast<Eigen::Index>(weight.shape().per_sample()) != in) {
    throw ShapeError("linear weight " + weight.shape().str() + " vs input " + x.shape().str());
  }
  y = Tensor({batch, out, 1, 1});
  const ConstMatrixMap xm(x.data(), batch, in);
  const ConstMatrixMap wm(weight.data(), out, in);
  const Eigen::Map<const Eigen::RowVectorX<real>> b(bias.data(), out);
  MatrixMap ym(y.data(), batch, out);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += b;
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor& dx,
                     Tensor& dweight, Tensor& dbias) {
  const int batch = x.shape().n;
  const auto in = static_cast<Eigen::Index>(x.shape().per_sample());
  const int out = weight.shape().n;
  dx = Tensor(x.shape());
  dweight = Tensor(weight.shape());
  dbias = Tensor({out, 1, 1, 1});
  const ConstMatrixMap xm(x.data(), batch, in);
  const ConstMatrixMap wm(weight.data(), out, in);
  const ConstMatrixMap gm(dy.data(), batch, out);
  MatrixMap(dx.data(), batch, in).noalias() = gm * wm;
  MatrixMap(dweight.data(), out, in).noalias() = gm.transpose() * xm;
  Eigen::Map<Eigen::RowVectorX<real>>(dbias.data(), out) = gm.colwise().sum();
}

void batchnorm_forward_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps,
                             Tensor& y, BatchNormCache& cache) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const real count = static_cast<real>(s.n) * plane;
  y = Tensor(s);
  cache.mean.assign(s.c, 0.0);
  cache.inv_std.assign(s.c, 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.c; ++c) {
    real sum = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const real* p = x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const real mean = sum / count;
    real sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const real* p = x.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const real inv_std = 1.0 / std::sqrt(sq / count + eps);
    cache.mean[c] = mean;
    cache.inv_std[c] = inv_std;
    const real scale = gamma[c] * inv_std;
    const real shift = beta[c] - mean * scale;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  }
}

void batchnorm_forward_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            const Tensor& running_mean, const Tensor& running_var, real eps,
                            Tensor& y) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  y = Tensor(s);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const real scale = gamma[c] / std::sqrt(running_var[c] + eps);
      const real shift = beta[c] - running_mean[c] * scale;
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  }
}

void batchnorm_backward(const Tensor& x, const Tensor& gamma, const BatchNormCache& cache,
                        const Tensor& dy, Tensor& dx, Tensor& dgamma, Tensor& dbeta) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const real count = static_cast<real>(s.n) * plane;
  dx = Tensor(s);
  dgamma = Tensor({s.c, 1, 1, 1});
  dbeta = Tensor({s.c, 1, 1, 1});
#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.c; ++c) {
    const real mean = cache.mean[c];
    const real inv_std = cache.inv_std[c];
    real sum_dy = 0.0;
    real sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * (x[off + i] - mean) * inv_std;
      }
    }
    dgamma[c] = sum_dy_xhat;
    dbeta[c] = sum_dy;
    const real k = gamma[c] * inv_std / count;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const real xhat = (x[off + i] - mean) * inv_std;
        dx[off + i] = k * (count * dy[off + i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::size_t>& argmax) {
  const Shape s = x.shape();
  const Shape ys{s.n, s.c, s.h / 2, s.w / 2};
  if (ys.h < 1 || ys.w < 1) throw ShapeError("max pooling input too small: " + s.str());
  y = Tensor(ys);
  argmax.assign(ys.count(), 0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t in_off = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      const std::size_t out_off = (static_cast<std::size_t>(n) * s.c + c) * ys.plane();
      for (int oh = 0; oh < ys.h; ++oh) {
        for (int ow = 0; ow < ys.w; ++ow) {
          real best = -std::numeric_limits<real>::infinity();
          std::size_t best_idx = 0;
          for (int kh = 0; kh < 2; ++kh) {
            for (int kw = 0; kw < 2; ++kw) {
              const std::size_t idx = in_off + (2 * oh + kh) * s.w + (2 * ow + kw);
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          y[out_off + oh * ys.w + ow] = best;
          argmax[out_off + oh * ys.w + ow] = best_idx;
        }
      }
    }
  }
}

void maxpool2_backward(const Shape& x_shape, const std::vector<std::size_t>& argmax,
                       const Tensor& dy, Tensor& dx) {
  dx = Tensor(x_shape);
  const std::size_t per = dy.shape().plane();
  const int planes = dy.shape().n * dy.shape().c;
  // Each output plane scatters only into its own input plane.
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t o = static_cast<std::size_t>(p) * per + i;
      dx[argmax[o]] += dy[o];
    }
  }
}

void adaptive_avgpool_forward(const Tensor& x, int out_h, int out_w, Tensor& y) {
  const Shape s = x.shape();
  if (out_h < 1 || out_w < 1 || out_h > s.h || out_w > s.w) {
    throw ShapeError("adaptive pooling target larger than input " + s.str());
  }
  y = Tensor({s.n, s.c, out_h, out_w});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const real* src = x.data() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
      real* dst = y.data() + (static_cast<std::size_t>(n) * s.c + c) * out_h * out_w;
      for (int oh = 0; oh < out_h; ++oh) {
        const int h0 = adaptive_bin_start(oh, out_h, s.h), h1 = adaptive_bin_end(oh, out_h, s.h);
        for (int ow = 0; ow < out_w; ++ow) {
          const int w0 = adaptive_bin_start(ow, out_w, s.w), w1 = adaptive_bin_end(ow, out_w, s.w);
          real acc = 0.0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) acc += src[h * s.w + w];
          dst[oh * out_w + ow] = acc / static_cast<real>((h1 - h0) * (w1 - w0));
        }
      }
    }
  }
}

void adaptive_avgpool_backward(const Shape& x_shape, const Tensor& dy, Tensor& dx) {
  const Shape ys = dy.shape();
  dx = Tensor(x_shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < ys.n; ++n) {
    for (int c = 0; c < ys.c; ++c) {
      real* dst = dx.data() + (static_cast<std::size_t>(n) * x_shape.c + c) * x_shape.plane();
      const real* src = dy.data() + (static_cast<std::size_t>(n) * ys.c + c) * ys.plane();
      for (int oh = 0; oh < ys.h; ++oh) {
        const int h0 = adaptive_bin_start(oh, ys.h, x_shape.h);
        const int h1 = adaptive_bin_end(oh, ys.h, x_shape.h);
        for (int ow = 0; ow < ys.w; ++ow) {
          const int w0 = adaptive_bin_start(ow, ys.w, x_shape.w);
          const int w1 = adaptive_bin_end(ow, ys.w, x_shape.w);
          const real share = src[oh * ys.w + ow] / static_cast<real>((h1 - h0) * (w1 - w0));
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) dst[h * x_shape.w + w] += share;
        }
      }
    }
  }
}

}  // namespace dynkd::kernels::parallel
