#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "grad_cases.hpp"
#include "matis/attention.hpp"
#include "matis/error.hpp"

using namespace matis;
using testutil::random_mat;

namespace {

// plain double loop, no masking
Mat naive_attention(const Mat& q, const Mat& k, const Mat& v) {
  Mat out = Mat::Zero(q.rows(), v.cols());
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<double> w(k.rows());
    double mx = -1e300, z = 0;
    for (int p = 0; p < k.rows(); ++p) {
      double dot = 0;
      for (int c = 0; c < q.cols(); ++c) dot += q(i, c) * k(p, c);
      w[p] = dot * scale;
      mx = std::max(mx, w[p]);
    }
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (int p = 0; p < k.rows(); ++p) {
      for (int c = 0; c < v.cols(); ++c) out(i, c) += w[p] / z * v(p, c);
    }
  }
  return out;
}

}  // namespace

TEST(Attention, UnmaskedMatchesNaive) {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 20; ++i) {
    const Mat q = random_mat(rng, 4, 5), k = random_mat(rng, 9, 5), v = random_mat(rng, 9, 3);
    const Mat zero = Mat::Zero(4, 9);
    const Mat want = naive_attention(q, k, v);
    EXPECT_LE((serial::masked_attention(q, k, v, zero) - want).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((omp::masked_attention(q, k, v, zero) - want).cwiseAbs().maxCoeff(), 1e-9);
    ag::Tape t;
    const Mat got = masked_attention(t.constant(q), t.constant(k), t.constant(v), nullptr).value();
    EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Attention, SingleOpenPositionCopiesValue) {
  std::mt19937_64 rng(42);
  const Mat q = random_mat(rng, 3, 4, 10.0), k = random_mat(rng, 6, 4, 10.0), v = random_mat(rng, 6, 2);
  Mat mask = Mat::Constant(3, 6, blocked_logit());
  mask(1, 4) = 0.0;
  mask.row(0).setZero();
  mask.row(2).setZero();
  const Mat out = serial::masked_attention(q, k, v, mask);
  EXPECT_EQ(out(1, 0), v(4, 0));
  EXPECT_EQ(out(1, 1), v(4, 1));
  EXPECT_EQ(out, omp::masked_attention(q, k, v, mask));
}

TEST(Attention, WeightsAreDistributionsWithExactZeros) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const Mat q = random_mat(rng, 5, 4, 3.0), k = random_mat(rng, 12, 4, 3.0);
    Mat probs(5, 12);
    for (Eigen::Index j = 0; j < probs.size(); ++j) probs.data()[j] = u(rng);
    const Mat mask = attention_mask_from_probs(probs, 0.5);
    const Mat w = attention_weights(q, k, mask);
    for (int r = 0; r < 5; ++r) {
      EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
      for (int p = 0; p < 12; ++p) {
        EXPECT_GE(w(r, p), 0.0);
        if (mask(r, p) != 0.0) EXPECT_EQ(w(r, p), 0.0);
      }
    }
  }
}

TEST(AttentionMask, Threshold) {
  Mat probs(1, 3);
  probs << 0.6, 0.4, 0.5;
  const Mat m = attention_mask_from_probs(probs, 0.5);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(0, 1), blocked_logit());
  EXPECT_EQ(m(0, 2), 0.0);
  EXPECT_EQ(std::exp(blocked_logit()), 0.0);
  EXPECT_TRUE(std::isfinite(blocked_logit()));
}

TEST(AttentionMask, AllOpenAndFallback) {
  Mat probs = Mat::Ones(2, 4);
  EXPECT_EQ(attention_mask_from_probs(probs), Mat::Zero(2, 4));
  probs.row(1).setZero();
  const Mat m = attention_mask_from_probs(probs);
  EXPECT_EQ(m.row(1), Mat::Zero(1, 4));
}

TEST(Attention, ShapeAndFiniteChecks) {
  const Mat q = Mat::Ones(2, 3), k = Mat::Ones(4, 3), v = Mat::Ones(4, 2);
  try {
    serial::masked_attention(q, k, v, Mat::Zero(2, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  Mat bad = q;
  bad(0, 0) = std::nan("");
  try {
    serial::masked_attention(bad, k, v, Mat::Zero(2, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteInput);
  }
}

TEST(MaskHead, Identities) {
  Mat seg(2, 2), feats(3, 2);
  seg << 1, 0, 0, 0;
  feats << 0, 1, 0, 2, 0, -3;
  const Mat logits = mask_head(seg, feats);
  EXPECT_EQ(logits.row(0), Mat::Zero(1, 3));
  EXPECT_EQ(logistic(logits)(0, 1), 0.5);

  Mat f(1, 3);
  f << 1, 2, 3;
  const Mat scaled = 2.5 * f;
  EXPECT_DOUBLE_EQ(mask_head(scaled, f)(0, 0), 2.5 * 14.0);
}

TEST(MaskHead, MatchesLoop) {
  std::mt19937_64 rng(44);
  const Mat seg = random_mat(rng, 3, 5), feats = random_mat(rng, 8, 5);
  const Mat got = mask_head(seg, feats);
  for (int q = 0; q < 3; ++q) {
    for (int p = 0; p < 8; ++p) {
      double dot = 0;
      for (int c = 0; c < 5; ++c) dot += seg(q, c) * feats(p, c);
      EXPECT_NEAR(got(q, p), dot, 1e-12);
    }
  }
}

TEST(GradCheck, MaskedAttentionLayer) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto r = testutil::attention_layer_grad_check(seed);
    EXPECT_GE(r.checked, 100);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}
