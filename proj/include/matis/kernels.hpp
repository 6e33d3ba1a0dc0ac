#pragma once

// Data-parallel kernels. Each kernel has a serial reference in
// matis::serial and an OpenMP version in matis::omp; both must agree
// exactly. The OpenMP variants respect MATIS_BENCH_THREADS.

#include <optional>
#include <span>
#include <vector>

#include "matis/mask.hpp"

namespace matis {

/// Dense rows x cols matrix of pairwise IoUs; nullopt where both masks are empty.
struct IouMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::optional<double>> values;

  const std::optional<double>& operator()(int r, int c) const {
    return values[static_cast<std::size_t>(r) * cols + c];
  }
};

/// Thread count honoring the MATIS_BENCH_THREADS cap.
int parallel_threads();

namespace serial {
IouMatrix iou_matrix(std::span<const BinaryMask> a, std::span<const BinaryMask> b);
}  // namespace serial

namespace omp {
IouMatrix iou_matrix(std::span<const BinaryMask> a, std::span<const BinaryMask> b);
}  // namespace omp

}  // namespace matis
