#include "matis/kernels.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace matis {

int parallel_threads() {
  int threads = omp_get_max_threads();
  if (const char* cap = std::getenv("MATIS_BENCH_THREADS")) {
    try {
      const int v = std::stoi(cap);
      if (v >= 1 && v < threads) threads = v;
    } catch (const std::exception&) {
      // ignore malformed caps
    }
  }
  return threads;
}

namespace {

IouMatrix make_matrix(std::size_t rows, std::size_t cols) {
  IouMatrix m;
  m.rows = static_cast<int>(rows);
  m.cols = static_cast<int>(cols);
  m.values.resize(rows * cols);
  return m;
}

}  // namespace

namespace serial {

IouMatrix iou_matrix(std::span<const BinaryMask> a, std::span<const BinaryMask> b) {
  IouMatrix m = make_matrix(a.size(), b.size());
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      m.values[static_cast<std::size_t>(r) * m.cols + c] = mask_iou(a[r], b[c]);
    }
  }
  return m;
}

}  // namespace serial

namespace omp {

IouMatrix iou_matrix(std::span<const BinaryMask> a, std::span<const BinaryMask> b) {
  IouMatrix m = make_matrix(a.size(), b.size());
  // shape errors must surface before entering the parallel region
  if (!a.empty() && !b.empty()) {
    for (const auto& x : a) intersection_union(x, b.front());
    for (const auto& y : b) intersection_union(a.front(), y);
  }
  const int total = m.rows * m.cols;
#pragma omp parallel for schedule(static) num_threads(parallel_threads())
  for (int i = 0; i < total; ++i) {
    m.values[i] = mask_iou(a[i / m.cols], b[i % m.cols]);
  }
  return m;
}

}  // namespace omp

}  // namespace matis
