#include "dynkd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dynkd/error.hpp"
#include "dynkd/kernels.hpp"

namespace dynkd {

namespace {

constexpr real kNormEps = 1e-12;

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw InputError(std::string(what) + " contains non-finite values");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(what) + ": shapes " + a.shape().str() + " and " +
                     b.shape().str() + " differ");
  }
}

real sign(real v) { return static_cast<real>((v > 0.0) - (v < 0.0)); }

// Numerically stable log-softmax of one row.
void log_softmax_row(const real* z, int k, real tau, real* out) {
  real mx = z[0] / tau;
  for (int i = 1; i < k; ++i) mx = std::max(mx, z[i] / tau);
  real sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(z[i] / tau - mx);
  const real lse = mx + std::log(sum);
  for (int i = 0; i < k; ++i) out[i] = z[i] / tau - lse;
}

}  // namespace

real wasserstein_1d(std::span<const real> teacher, std::span<const real> student,
                    std::span<real> grad_student) {
  const std::size_t n = teacher.size();
  const std::size_t m = student.size();
  if (n == 0 || m == 0) throw InputError("wasserstein_1d: empty sample");
  if (!grad_student.empty() && grad_student.size() != m) {
    throw ShapeError("wasserstein_1d: gradient buffer size mismatch");
  }
  std::vector<real> t(teacher.begin(), teacher.end());
  std::sort(t.begin(), t.end());
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return student[a] < student[b]; });

  // Quantile breakpoints on the common grid of 1/(n*m): teacher steps every m,
  // student steps every n.
  const real total = static_cast<real>(n) * static_cast<real>(m);
  std::size_t i = 0, j = 0;
  std::uint64_t pos = 0;
  real distance = 0.0;
  while (i < n && j < m) {
    const std::uint64_t next_t = (i + 1) * static_cast<std::uint64_t>(m);
    const std::uint64_t next_s = (j + 1) * static_cast<std::uint64_t>(n);
    const std::uint64_t end = std::min(next_t, next_s);
    const real len = static_cast<real>(end - pos) / total;
    const real diff = student[order[j]] - t[i];
    distance += len * std::abs(diff);
    if (!grad_student.empty()) grad_student[order[j]] += len * sign(diff);
    pos = end;
    if (end == next_t) ++i;
    if (end == next_s) ++j;
  }
  return distance;
}

std::pair<Tensor, Tensor> align_spatial(const Tensor& a, const Tensor& b) {
  const int h = std::min(a.shape().h, b.shape().h);
  const int w = std::min(a.shape().w, b.shape().w);
  Tensor pa, pb;
  if (a.shape().h == h && a.shape().w == w) {
    pa = a;
  } else {
    kernels::parallel::adaptive_avgpool_forward(a, h, w, pa);
  }
  if (b.shape().h == h && b.shape().w == w) {
    pb = b;
  } else {
    kernels::parallel::adaptive_avgpool_forward(b, h, w, pb);
  }
  return {std::move(pa), std::move(pb)};
}

real wasserstein_feature_loss(const Tensor& f_teacher, const Tensor& f_student,
                              Tensor* grad_student) {
  if (f_teacher.empty() || f_student.empty()) {
    throw InputError("wasserstein_feature_loss: empty feature map");
  }
  if (f_teacher.shape().n != f_student.shape().n) {
    throw ShapeError("wasserstein_feature_loss: batch sizes differ");
  }
  require_finite(f_teacher, "teacher features");
  require_finite(f_student, "student features");

  auto [t, s] = align_spatial(f_teacher, f_student);
  const int batch = t.shape().n;
  Tensor grad_pooled(s.shape());
  std::vector<real> per_sample(batch, 0.0);
  const bool want = grad_student != nullptr;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    per_sample[b] = wasserstein_1d(t.sample(b), s.sample(b),
                                   want ? grad_pooled.sample(b) : std::span<real>{});
  }
  const real inv_batch = 1.0 / batch;
  real loss = 0.0;
  for (real v : per_sample) loss += v;
  loss *= inv_batch;

  if (want) {
    for (auto& v : grad_pooled.values()) v *= inv_batch;
    if (s.shape() == f_student.shape()) {
      *grad_student = std::move(grad_pooled);
    } else {
      kernels::parallel::adaptive_avgpool_backward(f_student.shape(), grad_pooled, *grad_student);
    }
  }
  return loss;
}

ChannelAdapter ChannelAdapter::identity(int channels) {
  ChannelAdapter a = zeros(channels, channels);
  for (int c = 0; c < channels; ++c) a.weight.value[static_cast<std::size_t>(c) * channels + c] = 1.0;
  return a;
}

ChannelAdapter ChannelAdapter::zeros(int c_in, int c_out) {
  if (c_in < 1 || c_out < 1) throw ShapeError("channel adapter needs positive channel counts");
  ChannelAdapter a;
  a.weight = Parameter("adapter.weight", Tensor({c_out, c_in, 1, 1}));
  a.bias = Parameter("adapter.bias", Tensor({c_out, 1, 1, 1}), false);
  return a;
}

ChannelAdapter ChannelAdapter::random(int c_in, int c_out, std::uint64_t seed) {
  ChannelAdapter a = zeros(c_in, c_out);
  std::mt19937_64 rng(seed);
  std::normal_distribution<real> dist(0.0, 1.0 / std::sqrt(static_cast<real>(c_in)));
  for (auto& v : a.weight.value.values()) v = dist(rng);
  return a;
}

Tensor adapt_channels(const ChannelAdapter& adapter, const Tensor& g) {
  const Shape s = g.shape();
  if (s.c != adapter.in_channels()) {
    throw ShapeError("adapt_channels: gradient has " + std::to_string(s.c) +
                     " channels, adapter expects " + std::to_string(adapter.in_channels()));
  }
  const int c_out = adapter.out_channels();
  const std::size_t plane = s.plane();
  Tensor out({s.n, c_out, s.h, s.w});
  const real* w = adapter.weight.value.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < s.n; ++n) {
    for (int o = 0; o < c_out; ++o) {
      real* dst = out.data() + (static_cast<std::size_t>(n) * c_out + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = adapter.bias.value[o];
      for (int i = 0; i < s.c; ++i) {
        const real wi = w[static_cast<std::size_t>(o) * s.c + i];
        const real* src = g.data() + (static_cast<std::size_t>(n) * s.c + i) * plane;
        for (std::size_t p = 0; p < plane; ++p) dst[p] += wi * src[p];
      }
    }
  }
  return out;
}

void adapt_channels_backward(ChannelAdapter& adapter, const Tensor& g, const Tensor& d_out) {
  const Shape s = g.shape();
  const int c_out = adapter.out_channels();
  if (d_out.shape() != Shape{s.n, c_out, s.h, s.w}) {
    throw ShapeError("adapt_channels_backward: upstream gradient shape mismatch");
  }
  const std::size_t plane = s.plane();
  real* dw = adapter.weight.grad.data();
  real* db = adapter.bias.grad.data();
#pragma omp parallel for schedule(static)
  for (int o = 0; o < c_out; ++o) {
    for (int n = 0; n < s.n; ++n) {
      const real* up = d_out.data() + (static_cast<std::size_t>(n) * c_out + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) db[o] += up[p];
      for (int i = 0; i < s.c; ++i) {
        const real* src = g.data() + (static_cast<std::size_t>(n) * s.c + i) * plane;
        real acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += up[p] * src[p];
        dw[static_cast<std::size_t>(o) * s.c + i] += acc;
      }
    }
  }
}

real euclidean_gradient_distance(const Tensor& g_teacher, const Tensor& g_student) {
  return gradient_matching_loss(g_teacher, g_student, 1.0).euclidean;
}

real cosine_gradient_similarity(const Tensor& g_teacher, const Tensor& g_student) {
  return gradient_matching_loss(g_teacher, g_student, 1.0).cosine;
}

GradMatchResult gradient_matching_loss(const Tensor& g_teacher, const Tensor& g_student, real r,
                                       bool want_gradients) {
  if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("gradient matching weight r must lie in [0, 1]");
  require_same_shape(g_teacher, g_student, "gradient_matching_loss");
  if (g_teacher.empty()) throw InputError("gradient_matching_loss: empty gradients");
  require_finite(g_teacher, "teacher gradient");
  require_finite(g_student, "student gradient");

  const int batch = g_teacher.shape().n;
  const std::size_t per = g_teacher.shape().per_sample();
  GradMatchResult res;
  if (want_gradients) {
    res.d_teacher = Tensor(g_teacher.shape());
    res.d_student = Tensor(g_student.shape());
  }
  std::vector<real> dist(batch), cos(batch);
  const real inv_batch = 1.0 / batch;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < batch; ++b) {
    const real* a = g_teacher.data() + b * per;
    const real* s = g_student.data() + b * per;
    real dd = 0.0, dot = 0.0, na2 = 0.0, ns2 = 0.0;
    bool identical = true;
    for (std::size_t i = 0; i < per; ++i) {
      const real d = a[i] - s[i];
      dd += d * d;
      dot += a[i] * s[i];
      na2 += a[i] * a[i];
      ns2 += s[i] * s[i];
      identical = identical && a[i] == s[i];
    }
    const real d = std::sqrt(dd);
    const real na = std::sqrt(na2);
    const real ns = std::sqrt(ns2);
    const real denom = (na + kNormEps) * (ns + kNormEps);
    dist[b] = d;
    cos[b] = identical ? 1.0 : std::clamp(dot / denom, -1.0, 1.0);

    if (!want_gradients) continue;
    real* gt = res.d_teacher.data() + b * per;
    real* gs = res.d_student.data() + b * per;
    const real euclid_w = r * inv_batch;
    const real cos_w = -(1.0 - r) * inv_batch;
    for (std::size_t i = 0; i < per; ++i) {
      if (d > 0.0) {
        gt[i] += euclid_w * (a[i] - s[i]) / d;
        gs[i] -= euclid_w * (a[i] - s[i]) / d;
      }
      if (!identical) {
        // dS/da = s / denom - dot * a / (na * (na + eps)^2 * (ns + eps)), symmetric in s.
        real dsa = s[i] / denom;
        real dss = a[i] / denom;
        if (na > 0.0) dsa -= dot * a[i] / (na * (na + kNormEps) * denom);
        if (ns > 0.0) dss -= dot * s[i] / (ns * (ns + kNormEps) * denom);
        gt[i] += cos_w * dsa;
        gs[i] += cos_w * dss;
      }
    }
  }
  for (int b = 0; b < batch; ++b) {
    res.euclidean += dist[b];
    res.cosine += cos[b];
  }
  res.euclidean *= inv_batch;
  res.cosine *= inv_batch;
  res.value = r * res.euclidean + (1.0 - r) * (1.0 - res.cosine);
  return res;
}

Tensor softmax(const Tensor& logits, real tau) {
  const int batch = logits.shape().n;
  const int k = static_cast<int>(logits.shape().per_sample());
  Tensor p(logits.shape());
  for (int b = 0; b < batch; ++b) {
    log_softmax_row(logits.data() + b * k, k, tau, p.data() + b * k);
    for (int i = 0; i < k; ++i) p[b * k + i] = std::exp(p[b * k + i]);
  }
  return p;
}

real distillation_loss(const Tensor& logits_teacher, const Tensor& logits_student, real tau,
                       bool tau_squared, Tensor* grad_student) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("distillation temperature must be > 0");
  require_same_shape(logits_teacher, logits_student, "distillation_loss");
  require_finite(logits_teacher, "teacher logits");
  require_finite(logits_student, "student logits");
  const int batch = logits_student.shape().n;
  const int k = static_cast<int>(logits_student.shape().per_sample());
  if (batch < 1 || k < 1) throw InputError("distillation_loss: empty logits");
  const real scale = (tau_squared ? tau * tau : 1.0) / batch;
  if (grad_student) *grad_student = Tensor(logits_student.shape());
  std::vector<real> lt(k), ls(k);
  real loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    log_softmax_row(logits_teacher.data() + b * k, k, tau, lt.data());
    log_softmax_row(logits_student.data() + b * k, k, tau, ls.data());
    real kl = 0.0;
    for (int i = 0; i < k; ++i) {
      const real pt = std::exp(lt[i]);
      if (pt > 0.0) kl += pt * (lt[i] - ls[i]);
      if (grad_student) {
        (*grad_student)[b * k + i] = scale * (std::exp(ls[i]) - pt) / tau;
      }
    }
    // Rounding can leave a tiny negative value for identical distributions.
    loss += std::max(kl, 0.0);
  }
  return loss * scale;
}

real classification_loss(const Tensor& logits, std::span<const int> labels, Tensor* grad_logits) {
  const int batch = logits.shape().n;
  const int k = static_cast<int>(logits.shape().per_sample());
  if (static_cast<int>(labels.size()) != batch) {
    throw ShapeError("classification_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch) + " samples");
  }
  require_finite(logits, "logits");
  if (grad_logits) *grad_logits = Tensor(logits.shape());
  std::vector<real> lp(k);
  real loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= k) {
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
    log_softmax_row(logits.data() + b * k, k, 1.0, lp.data());
    loss -= lp[y];
    if (grad_logits) {
      for (int i = 0; i < k; ++i) {
        (*grad_logits)[b * k + i] = (std::exp(lp[i]) - (i == y ? 1.0 : 0.0)) / batch;
      }
    }
  }
  return loss / batch;
}

LossBreakdown total_loss(const LossParts& parts, real beta) {
  const std::pair<const char*, real> terms[] = {{"classification", parts.classification},
                                                {"wasserstein", parts.wasserstein},
                                                {"grad_match", parts.grad_match},
                                                {"distill", parts.distill},
                                                {"beta", beta}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) throw NumericError(std::string("non-finite loss term: ") + name);
  }
  LossBreakdown out;
  out.classification = parts.classification;
  out.wasserstein = parts.wasserstein;
  out.grad_match = parts.grad_match;
  out.distill = parts.distill;
  out.beta = beta;
  out.total = parts.classification + beta * (parts.wasserstein + parts.grad_match + parts.distill);
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss term: total");
  return out;
}

}  // namespace dynkd
