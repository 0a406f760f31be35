#pragma once

// Loss terms of the dynamic distillation objective
//
//   L_total = L_classification + beta * (L_wasserstein + L_grad + L_distill)
//
// Every term is a batch mean. Functions that can feed an optimizer take an
// optional output tensor for the gradient w.r.t. the student-side argument.

#include <cstdint>
#include <span>
#include <vector>

#include "dynkd/parameter.hpp"
#include "dynkd/tensor.hpp"

namespace dynkd {

// ---------------------------------------------------------------------------
// Wasserstein feature loss

/// Exact 1-D Wasserstein-1 distance between the uniform empirical distributions
/// of `teacher` and `student` (sizes may differ). Integrates |F^-1 - G^-1| over
/// the merged quantile breakpoints, which reduces to the mean absolute
/// difference of matched order statistics for equal sizes. When `grad_student`
/// is non-empty it receives dW/dstudent (a subgradient at ties).
real wasserstein_1d(std::span<const real> teacher, std::span<const real> student,
                    std::span<real> grad_student = {});

/// Batch mean of per-sample W1 between flattened feature maps. Both maps are
/// first average-pooled to the smaller spatial extent; channel counts may
/// differ. `grad_student`, if given, is resized to f_student's shape.
real wasserstein_feature_loss(const Tensor& f_teacher, const Tensor& f_student,
                              Tensor* grad_student = nullptr);

// ---------------------------------------------------------------------------
// Gradient matching

/// Learned per-position channel mix (a 1x1 convolution) that maps teacher
/// gradients onto the student's channel count. Trained with the student and
/// dropped at inference.
struct ChannelAdapter {
  Parameter weight;  // (c_out, c_in, 1, 1)
  Parameter bias;    // (c_out, 1, 1, 1)

  int in_channels() const { return weight.value.shape().c; }
  int out_channels() const { return weight.value.shape().n; }

  static ChannelAdapter identity(int channels);
  static ChannelAdapter zeros(int c_in, int c_out);
  // Weights ~ N(0, 1/c_in), zero bias.
  static ChannelAdapter random(int c_in, int c_out, std::uint64_t seed);
};

Tensor adapt_channels(const ChannelAdapter& adapter, const Tensor& g);

/// Accumulates dL/dweight and dL/dbias into the adapter's parameter grads.
void adapt_channels_backward(ChannelAdapter& adapter, const Tensor& g, const Tensor& d_out);

/// Average-pools `a` and `b` to the smaller of their spatial extents.
std::pair<Tensor, Tensor> align_spatial(const Tensor& a, const Tensor& b);

/// Batch mean of the flattened per-sample L2 distance.
real euclidean_gradient_distance(const Tensor& g_teacher, const Tensor& g_student);

/// Batch mean of per-sample cosine similarity with 1e-12 added to each norm.
/// Identical vectors (including both zero) count as similarity 1.
real cosine_gradient_similarity(const Tensor& g_teacher, const Tensor& g_student);

struct GradMatchResult {
  real value = 0.0;
  real euclidean = 0.0;
  real cosine = 0.0;
  Tensor d_teacher;  // dL/dg_teacher (filled when requested)
  Tensor d_student;  // dL/dg_student (filled when requested)
};

/// L_grad = r * D_euclidean + (1 - r) * (1 - S_cosine), r in [0, 1].
GradMatchResult gradient_matching_loss(const Tensor& g_teacher, const Tensor& g_student, real r,
                                       bool want_gradients = false);

// ---------------------------------------------------------------------------
// Output-level losses

/// KL(softmax(z_T / tau) || softmax(z_S / tau)), batch mean. Multiplied by
/// tau^2 when `tau_squared` is set.
real distillation_loss(const Tensor& logits_teacher, const Tensor& logits_student, real tau,
                       bool tau_squared = false, Tensor* grad_student = nullptr);

/// Cross-entropy of softmax(logits) against hard labels, batch mean.
real classification_loss(const Tensor& logits, std::span<const int> labels,
                         Tensor* grad_logits = nullptr);

/// Row-wise softmax of a (N, K, 1, 1) logit batch.
Tensor softmax(const Tensor& logits, real tau = 1.0);

// ---------------------------------------------------------------------------
// Total objective

struct LossParts {
  real classification = 0.0;
  real wasserstein = 0.0;
  real grad_match = 0.0;
  real distill = 0.0;
};

struct LossBreakdown {
  real classification = 0.0;
  real wasserstein = 0.0;
  real grad_match = 0.0;
  real distill = 0.0;
  real beta = 0.0;
  real total = 0.0;
};

/// Throws NumericError naming the first non-finite term.
LossBreakdown total_loss(const LossParts& parts, real beta);

}  // namespace dynkd
