// Serial reference vs OpenMP kernels. Thread count follows
// MATIS_BENCH_THREADS when set.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "matis/attention.hpp"
#include "matis/inference.hpp"
#include "matis/kernels.hpp"
#include "matis/synth.hpp"

using namespace matis;

namespace {

std::vector<BinaryMask> blobs(int n, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pos(0, side - 1), rad(2, side / 4);
  std::vector<BinaryMask> out;
  for (int i = 0; i < n; ++i) {
    BinaryMask m(side, side);
    const int r0 = pos(rng), c0 = pos(rng), rr = rad(rng);
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) m.set(r, c, (r - r0) * (r - r0) + (c - c0) * (c - c0) <= rr * rr);
    }
    out.push_back(std::move(m));
  }
  return out;
}

Mat random(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

template <bool Parallel>
void BM_IouMatrix(benchmark::State& state) {
  const auto a = blobs(static_cast<int>(state.range(0)), 64, 1);
  const auto b = blobs(8, 64, 2);
  for (auto _ : state) {
    auto m = Parallel ? omp::iou_matrix(a, b) : serial::iou_matrix(a, b);
    benchmark::DoNotOptimize(m.values.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 8);
}

template <bool Parallel>
void BM_MaskedAttention(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const int n = static_cast<int>(state.range(0)), p = 1024, d = 32;
  const Mat q = random(rng, n, d), k = random(rng, p, d), v = random(rng, p, d);
  Mat probs(n, p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index i = 0; i < probs.size(); ++i) probs.data()[i] = u(rng);
  const Mat mask = attention_mask_from_probs(probs);
  for (auto _ : state) {
    Mat out = Parallel ? omp::masked_attention(q, k, v, mask) : serial::masked_attention(q, k, v, mask);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_BatchedSelection(benchmark::State& state) {
  const SynthConfig cfg;
  std::vector<ProposalSet> sets;
  for (int i = 0; i < state.range(0); ++i) {
    sets.push_back(gen_noisy_proposals(gen_frame(cfg, static_cast<std::uint64_t>(i)).annotation, cfg,
                                       static_cast<std::uint64_t>(i)));
  }
  const auto sel = InferenceConfig::defaults(Strategy::Nms, cfg.multi_instance);
  std::vector<std::vector<Region>> out(sets.size());
  const int n = static_cast<int>(sets.size());
  for (auto _ : state) {
    if (Parallel) {
#pragma omp parallel for schedule(dynamic) num_threads(parallel_threads())
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = select(sets[static_cast<std::size_t>(i)], sel);
    } else {
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = select(sets[static_cast<std::size_t>(i)], sel);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(BM_IouMatrix<false>)->Name("iou_matrix/serial")->Arg(100)->Arg(400);
BENCHMARK(BM_IouMatrix<true>)->Name("iou_matrix/omp")->Arg(100)->Arg(400);
BENCHMARK(BM_MaskedAttention<false>)->Name("masked_attention/serial")->Arg(100)->Arg(400);
BENCHMARK(BM_MaskedAttention<true>)->Name("masked_attention/omp")->Arg(100)->Arg(400);
BENCHMARK(BM_BatchedSelection<false>)->Name("select_nms/serial")->Arg(32);
BENCHMARK(BM_BatchedSelection<true>)->Name("select_nms/omp")->Arg(32);

BENCHMARK_MAIN();
