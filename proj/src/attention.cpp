#include "matis/attention.hpp"

#include <cmath>
#include <limits>

#include "matis/error.hpp"
#include "matis/kernels.hpp"

namespace matis {

double blocked_logit() {
  static const double value = [] {
    const double v = std::numeric_limits<double>::lowest();
    if (std::exp(v) != 0.0) throw Error(ErrorKind::NonFiniteInput, "exp(lowest) is not zero");
    return v;
  }();
  return value;
}

Mat attention_mask_from_probs(const Mat& soft_masks, double tau) {
  Mat mask = Mat::Zero(soft_masks.rows(), soft_masks.cols());
  const double blocked = blocked_logit();
  for (Eigen::Index q = 0; q < soft_masks.rows(); ++q) {
    bool any_open = false;
    for (Eigen::Index p = 0; p < soft_masks.cols(); ++p) {
      if (soft_masks(q, p) >= tau) {
        any_open = true;
      } else {
        mask(q, p) = blocked;
      }
    }
    if (!any_open) mask.row(q).setZero();
  }
  return mask;
}

namespace {

void check_shapes(const Mat& q, const Mat& k, const Mat& v, const Mat& mask) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || mask.rows() != q.rows() ||
      mask.cols() != k.rows() || q.cols() == 0) {
    throw Error(ErrorKind::ShapeMismatch, "masked_attention: inconsistent shapes");
  }
  if (!q.allFinite() || !k.allFinite() || !v.allFinite()) {
    throw Error(ErrorKind::NonFiniteInput, "masked_attention: non-finite input");
  }
}

// one output row; shared by the serial and OpenMP kernels
void attend_row(const Mat& q, const Mat& k, const Mat& v, const Mat& mask, Eigen::Index row,
                double inv_sqrt_d, double* logits, Mat& out) {
  const Eigen::Index n_keys = k.rows();
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index p = 0; p < n_keys; ++p) {
    double dot = 0.0;
    for (Eigen::Index c = 0; c < q.cols(); ++c) dot += q(row, c) * k(p, c);
    logits[p] = dot * inv_sqrt_d + mask(row, p);
    if (logits[p] > mx) mx = logits[p];
  }
  double z = 0.0;
  for (Eigen::Index p = 0; p < n_keys; ++p) {
    logits[p] = std::exp(logits[p] - mx);
    z += logits[p];
  }
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    double acc = 0.0;
    for (Eigen::Index p = 0; p < n_keys; ++p) acc += logits[p] * v(p, c);
    out(row, c) = acc / z;
  }
}

}  // namespace

Mat attention_weights(const Mat& q, const Mat& k, const Mat& mask) {
  check_shapes(q, k, k, mask);
  Mat z = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols())) + mask;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double mx = z.row(r).maxCoeff();
    // scalar exp: Eigen's vectorized exp clamps and leaves blocked entries denormal
    z.row(r) = z.row(r).unaryExpr([mx](double v) { return std::exp(v - mx); });
    z.row(r) /= z.row(r).sum();
  }
  return z;
}

namespace serial {

Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, const Mat& mask) {
  check_shapes(q, k, v, mask);
  Mat out(q.rows(), v.cols());
  std::vector<double> logits(static_cast<std::size_t>(k.rows()));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    attend_row(q, k, v, mask, r, inv_sqrt_d, logits.data(), out);
  }
  return out;
}

}  // namespace serial

namespace omp {

Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, const Mat& mask) {
  check_shapes(q, k, v, mask);
  Mat out(q.rows(), v.cols());
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const auto rows = static_cast<int>(q.rows());
#pragma omp parallel num_threads(parallel_threads())
  {
    std::vector<double> logits(static_cast<std::size_t>(k.rows()));
#pragma omp for schedule(static)
    for (int r = 0; r < rows; ++r) {
      attend_row(q, k, v, mask, r, inv_sqrt_d, logits.data(), out);
    }
  }
  return out;
}

}  // namespace omp

ag::Var masked_attention(ag::Var q, ag::Var k, ag::Var v, const Mat* mask) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "masked_attention: inconsistent shapes");
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  auto weights = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), s), mask);
  return ag::matmul(weights, v);
}

Mat mask_head(const Mat& seg, const Mat& pixel_features) {
  if (seg.cols() != pixel_features.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "mask_head: embedding widths differ");
  }
  return seg * pixel_features.transpose();
}

Mat logistic(const Mat& logits) {
  return logits.unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

}  // namespace matis
