#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "matis/error.hpp"
#include "matis/matching.hpp"
#include "test_util.hpp"

using namespace matis;

namespace {

CostMatrix random_cost(std::mt19937_64& rng, int rows, int cols, bool integer) {
  CostMatrix m(rows, cols);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_int_distribution<int> k(0, 4);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = integer ? k(rng) : u(rng);
  }
  return m;
}

std::vector<std::vector<double>> as_rows(const CostMatrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  }
  return out;
}

ProposalSet random_proposals(std::mt19937_64& rng, int n, int num_classes, int h, int w) {
  ProposalSet ps;
  ps.frame_id = "x";
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int q = 0; q < n; ++q) {
    std::vector<double> probs(num_classes + 1);
    double sum = 0;
    for (auto& p : probs) sum += (p = u(rng) + 1e-3);
    for (auto& p : probs) p /= sum;
    SoftMask m(h, w);
    for (auto& p : m.probs) p = u(rng);
    ps.proposals.emplace_back(std::move(probs), std::move(m));
  }
  return ps;
}

FrameAnnotation random_gt(std::mt19937_64& rng, int g, int num_classes, int h, int w) {
  FrameAnnotation gt{"x", h, w, {}};
  std::uniform_int_distribution<int> cls(1, num_classes);
  for (int i = 0; i < g; ++i) gt.instances.push_back({cls(rng), testutil::random_mask(rng, h, w)});
  return gt;
}

}  // namespace

TEST(Hungarian, IdentityFavoring) {
  const Assignment a = hungarian(CostMatrix(2, 2, {0, 9, 9, 0}));
  EXPECT_EQ(a, (Assignment{{0, 0}, {1, 1}}));
}

TEST(Hungarian, SingleEntry) {
  const CostMatrix m(1, 1, {5});
  const Assignment a = hungarian(m);
  EXPECT_EQ(a, (Assignment{{0, 0}}));
  EXPECT_EQ(assignment_cost(m, a), 5.0);
}

TEST(Hungarian, EmptyCases) {
  EXPECT_TRUE(hungarian(CostMatrix(3, 0)).empty());
  try {
    hungarian(CostMatrix(0, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyMatrix);
  }
}

TEST(Hungarian, NonFiniteThrows) {
  CostMatrix m(2, 2, 1.0);
  m(1, 0) = std::nan("");
  EXPECT_THROW(hungarian(m), Error);
}

TEST(Hungarian, LowestRowWinsTies) {
  // every row costs the same for the single column
  const Assignment a = hungarian(CostMatrix(4, 1, 3.0));
  EXPECT_EQ(a, (Assignment{{0, 0}}));
}

TEST(Hungarian, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 7);
  for (int i = 0; i < 150; ++i) {
    const int rows = dim(rng), cols = dim(rng);
    const CostMatrix m = random_cost(rng, rows, cols, i % 2 == 0);
    const Assignment a = hungarian(m);
    EXPECT_EQ(static_cast<int>(a.size()), std::min(rows, cols));
    std::vector<int> used_rows, used_cols;
    for (const auto& x : a) {
      used_rows.push_back(x.row);
      used_cols.push_back(x.col);
    }
    std::sort(used_rows.begin(), used_rows.end());
    EXPECT_EQ(std::adjacent_find(used_rows.begin(), used_rows.end()), used_rows.end());
    EXPECT_TRUE(std::is_sorted(used_cols.begin(), used_cols.end()));
    EXPECT_NEAR(assignment_cost(m, a), testutil::brute_force_assignment(as_rows(m)), 1e-9);
  }
}

TEST(PairCost, PerfectProposal) {
  BinaryMask gt(2, 2, {1, 0, 0, 1});
  std::vector<double> probs{1.0, 0.0, 0.0};
  RegionProposal p(probs, SoftMask::from_binary(gt));
  const MatchWeights w;
  EXPECT_NEAR(pair_cost(p, 1, gt, w), -w.w_cls, 1e-9);
}

TEST(PairCost, HandComputed) {
  SoftMask soft(2, 2);
  soft.probs = {0.8, 0.2, 0.2, 0.8};
  BinaryMask gt(2, 2, {1, 0, 0, 1});
  RegionProposal p({0.5, 0.3, 0.2}, soft);
  const MatchWeights w{1, 1, 1, 0.1};
  const double bce = -std::log(0.8);  // every pixel is 0.8 on its target side
  const double dice = 1.0 - (2.0 * 1.6 + 1.0) / (2.0 + 2.0 + 1.0);
  EXPECT_NEAR(pair_cost(p, 1, gt, w), -0.5 + bce + dice, 1e-12);
}

TEST(PairCost, WorstCase) {
  BinaryMask gt(2, 2, {1, 0, 0, 1});
  BinaryMask anti(2, 2, {0, 1, 1, 0});
  const MatchWeights w;
  RegionProposal worst({0.0, 0.0, 1.0}, SoftMask::from_binary(anti));
  RegionProposal better({0.1, 0.0, 0.9}, SoftMask::from_binary(anti));
  EXPECT_GT(pair_cost(worst, 1, gt, w), pair_cost(better, 1, gt, w));
}

TEST(PairCost, Monotone) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const MatchWeights w;
  for (int i = 0; i < 100; ++i) {
    const BinaryMask gt = testutil::random_mask(rng, 6, 6);
    SoftMask soft(6, 6);
    for (auto& p : soft.probs) p = u(rng);
    const double pc = 0.6 * u(rng);
    RegionProposal low({pc, 1.0 - pc}, soft);
    RegionProposal high({pc + 0.1, 0.9 - pc}, soft);
    EXPECT_LT(pair_cost(high, 1, gt, w), pair_cost(low, 1, gt, w));

    SoftMask closer = soft;
    for (std::size_t k = 0; k < closer.probs.size(); ++k) {
      const double target = gt.bits()[k];
      closer.probs[k] += 0.5 * (target - closer.probs[k]);
    }
    RegionProposal near_gt({pc, 1.0 - pc}, closer);
    EXPECT_LE(pair_cost(near_gt, 1, gt, w), pair_cost(low, 1, gt, w) + 1e-12);
  }
}

TEST(SetCriterion, NoGroundTruth) {
  std::mt19937_64 rng(13);
  const ProposalSet ps = random_proposals(rng, 5, 3, 4, 4);
  const FrameAnnotation gt{"x", 4, 4, {}};
  const MatchWeights w;
  const CriterionResult r = set_criterion(ps, gt, w);
  EXPECT_TRUE(r.assignment.empty());
  double ce = 0;
  for (const auto& p : ps.proposals) ce -= std::log(p.no_object_prob());
  EXPECT_NEAR(r.loss, w.w_cls * ce / 5.0, 1e-12);
  EXPECT_EQ(r.bce_loss, 0.0);
  EXPECT_EQ(r.dice_loss, 0.0);
}

TEST(SetCriterion, PerfectProposalsApproachZero) {
  FrameAnnotation gt{"x", 4, 4, {}};
  BinaryMask a(4, 4), b(4, 4);
  for (int r = 0; r < 4; ++r) {
    a.set(r, 0);
    b.set(r, 3);
  }
  gt.instances = {{1, a}, {2, b}};
  const double eps = 1e-9;
  ProposalSet ps;
  ps.proposals.emplace_back(std::vector<double>{1 - 2 * eps, eps, eps}, SoftMask::from_binary(a));
  ps.proposals.emplace_back(std::vector<double>{eps, 1 - 2 * eps, eps}, SoftMask::from_binary(b));
  ps.proposals.emplace_back(std::vector<double>{eps, eps, 1 - 2 * eps}, SoftMask(4, 4));
  const CriterionResult r = set_criterion(ps, gt, MatchWeights{});
  EXPECT_LT(r.loss, 1e-6);
  EXPECT_GE(r.loss, 0.0);
}

TEST(SetCriterion, MatchesBruteForceMatching) {
  std::mt19937_64 rng(14);
  const MatchWeights w;
  for (int i = 0; i < 30; ++i) {
    const ProposalSet ps = random_proposals(rng, 3, 4, 8, 8);
    const FrameAnnotation gt = random_gt(rng, 2, 4, 8, 8);
    const CriterionResult r = set_criterion(ps, gt, w);
    std::vector<std::vector<double>> cost(3, std::vector<double>(2));
    for (int q = 0; q < 3; ++q) {
      for (int g = 0; g < 2; ++g) {
        cost[q][g] = pair_cost(ps.proposals[q], gt.instances[g].cls, gt.instances[g].mask, w);
      }
    }
    double got = 0;
    for (const auto& m : r.assignment) got += cost[m.row][m.col];
    EXPECT_NEAR(got, testutil::brute_force_assignment(cost), 1e-12);
  }
}

TEST(SetCriterion, PermutationEquivariant) {
  std::mt19937_64 rng(15);
  const MatchWeights w;
  for (int i = 0; i < 20; ++i) {
    const ProposalSet ps = random_proposals(rng, 6, 3, 6, 6);
    const FrameAnnotation gt = random_gt(rng, 3, 3, 6, 6);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ProposalSet shuffled = ps;
    for (int q = 0; q < 6; ++q) shuffled.proposals[q] = ps.proposals[perm[q]];
    const CriterionResult a = set_criterion(ps, gt, w);
    const CriterionResult b = set_criterion(shuffled, gt, w);
    EXPECT_EQ(a.loss, b.loss);
    ASSERT_EQ(a.assignment.size(), b.assignment.size());
    for (std::size_t k = 0; k < a.assignment.size(); ++k) {
      EXPECT_EQ(a.assignment[k].col, b.assignment[k].col);
      EXPECT_EQ(a.assignment[k].row, perm[b.assignment[k].row]);
    }
    EXPECT_GE(a.loss, 0.0);
  }
}

TEST(MatchWeights, Validate) {
  EXPECT_THROW((MatchWeights{0, 0, 0, 0.1}.validate()), Error);
  EXPECT_THROW((MatchWeights{-1, 1, 1, 0.1}.validate()), Error);
  EXPECT_NO_THROW(MatchWeights{}.validate());
}
