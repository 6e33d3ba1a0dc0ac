#pragma once

#include "matis/autograd.hpp"

namespace matis {

using ag::Mat;

/// Additive logit for blocked positions: the most negative finite double.
/// exp() of it (after any finite shift) is exactly 0.
double blocked_logit();

/// Entry (q, p) is 0 where soft_masks(q, p) >= tau, blocked_logit()
/// otherwise. Rows that would block every position are reset to all zeros.
Mat attention_mask_from_probs(const Mat& soft_masks, double tau = 0.5);

/// Row-stochastic weights softmax(Q K^T / sqrt(d) + M).
Mat attention_weights(const Mat& q, const Mat& k, const Mat& mask);

namespace serial {
/// Reference loop implementation of softmax(Q K^T / sqrt(d) + M) V.
Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, const Mat& mask);
}  // namespace serial

namespace omp {
/// Same contract as serial::masked_attention, parallel over query rows.
Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, const Mat& mask);
}  // namespace omp

/// Differentiable masked attention. A null mask means unmasked attention.
/// The mask is a constant: no gradient flows through it.
ag::Var masked_attention(ag::Var q, ag::Var k, ag::Var v, const Mat* mask);

/// logits(q, p) = seg.row(q) . pixel_features.row(p)
Mat mask_head(const Mat& seg, const Mat& pixel_features);

/// Elementwise logistic.
Mat logistic(const Mat& logits);

}  // namespace matis
