#include "matis/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "matis/error.hpp"

namespace matis {

CostMatrix::CostMatrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), entries_(static_cast<std::size_t>(rows) * cols, fill) {}

CostMatrix::CostMatrix(int rows, int cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (entries_.size() != static_cast<std::size_t>(rows) * cols) {
    throw Error(ErrorKind::ShapeMismatch, "cost entries do not match rows*cols");
  }
}

namespace {

// Shortest augmenting path assignment of n workers to m >= n jobs.
// Returns job_of_worker. Scans jobs in ascending order with strict
// comparisons so ties resolve toward lower indices.
std::vector<int> solve_assignment(int n, int m, auto&& cost_at) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> worker_of(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    worker_of[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = worker_of[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost_at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[worker_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (worker_of[j0] != 0);
    do {
      const int j1 = way[j0];
      worker_of[j0] = worker_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> job_of(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (worker_of[j] != 0) job_of[worker_of[j] - 1] = j - 1;
  }
  return job_of;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
  const int rows = cost.rows();
  const int cols = cost.cols();
  if (cols == 0) return {};
  if (rows == 0) throw Error(ErrorKind::EmptyMatrix, "cost matrix has no rows");
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!std::isfinite(cost(r, c))) {
        throw Error(ErrorKind::NonFiniteInput, "cost matrix entry is not finite");
      }
    }
  }
  Assignment out;
  if (rows >= cols) {
    // gt columns are the workers, proposals the jobs
    const auto row_of = solve_assignment(cols, rows, [&](int i, int j) { return cost(j, i); });
    for (int c = 0; c < cols; ++c) out.push_back({row_of[c], c});
  } else {
    const auto col_of = solve_assignment(rows, cols, [&](int i, int j) { return cost(i, j); });
    for (int r = 0; r < rows; ++r) out.push_back({r, col_of[r]});
    std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) { return a.col < b.col; });
  }
  return out;
}

double assignment_cost(const CostMatrix& cost, const Assignment& assignment) {
  double total = 0.0;
  for (const auto& m : assignment) total += cost(m.row, m.col);
  return total;
}

void MatchWeights::validate() const {
  if (w_cls < 0 || w_bce < 0 || w_dice < 0 || no_object_weight < 0) {
    throw Error(ErrorKind::ConfigInvalid, "match weights must be non-negative");
  }
  if (w_cls == 0 && w_bce == 0 && w_dice == 0) {
    throw Error(ErrorKind::ConfigInvalid, "at least one match weight must be positive");
  }
}

namespace {

constexpr double kProbFloor = 1e-12;

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorKind::DimensionMismatch,
                "soft mask has " + std::to_string(a) + " pixels, gt mask " + std::to_string(b));
  }
}

}  // namespace

double mask_bce(std::span<const double> probs, std::span<const std::uint8_t> bits) {
  require_same_length(probs.size(), bits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = bits[i] ? probs[i] : 1.0 - probs[i];
    sum -= std::log(std::max(p, kProbFloor));
  }
  return sum / static_cast<double>(probs.size());
}

double mask_dice_loss(std::span<const double> probs, std::span<const std::uint8_t> bits) {
  require_same_length(probs.size(), bits.size());
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += probs[i] * bits[i];
    psum += probs[i];
    tsum += bits[i];
  }
  return 1.0 - (2.0 * inter + 1.0) / (psum + tsum + 1.0);
}

double pair_cost(const RegionProposal& proposal, ClassId gt_class, const BinaryMask& gt_mask,
                 const MatchWeights& w) {
  const auto& soft = proposal.soft_mask();
  if (soft.height != gt_mask.height() || soft.width != gt_mask.width()) {
    throw Error(ErrorKind::DimensionMismatch, "proposal mask and gt mask differ in shape");
  }
  return w.w_cls * -proposal.prob(gt_class) + w.w_bce * mask_bce(soft.probs, gt_mask.bits()) +
         w.w_dice * mask_dice_loss(soft.probs, gt_mask.bits());
}

CostMatrix cost_matrix(const ProposalSet& proposals, const FrameAnnotation& gt,
                       const MatchWeights& w) {
  const int rows = proposals.size();
  const int cols = static_cast<int>(gt.instances.size());
  CostMatrix cost(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto& inst = gt.instances[c];
      cost(r, c) = pair_cost(proposals.proposals[r], inst.cls, inst.mask, w);
    }
  }
  return cost;
}

double order_independent_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum;
}

CriterionResult set_criterion(const ProposalSet& proposals, const FrameAnnotation& gt,
                              const MatchWeights& w) {
  w.validate();
  CriterionResult result;
  const int n = proposals.size();
  const int g = static_cast<int>(gt.instances.size());
  if (n == 0) throw Error(ErrorKind::EmptyMatrix, "proposal set is empty");

  result.assignment = hungarian(cost_matrix(proposals, gt, w));

  std::vector<int> target(n, -1);  // -1 = no-object
  for (const auto& m : result.assignment) target[m.row] = m.col;

  // class cross entropy, weighted mean as in a weighted-softmax criterion
  std::vector<double> weighted_terms;
  std::vector<double> weights;
  weighted_terms.reserve(n);
  for (int q = 0; q < n; ++q) {
    const auto& prop = proposals.proposals[q];
    const bool matched = target[q] >= 0;
    const double p = matched ? prop.prob(gt.instances[target[q]].cls) : prop.no_object_prob();
    const double weight = matched ? 1.0 : w.no_object_weight;
    weighted_terms.push_back(-weight * std::log(std::max(p, kProbFloor)));
    weights.push_back(weight);
  }
  const double weight_sum = order_independent_sum(weights);
  result.class_loss =
      weight_sum > 0 ? order_independent_sum(weighted_terms) / weight_sum : 0.0;

  if (g > 0) {
    double bce = 0.0, dice = 0.0;
    for (const auto& m : result.assignment) {
      const auto& soft = proposals.proposals[m.row].soft_mask().probs;
      const auto bits = gt.instances[m.col].mask.bits();
      bce += mask_bce(soft, bits);
      dice += mask_dice_loss(soft, bits);
    }
    const double matched = static_cast<double>(result.assignment.size());
    result.bce_loss = bce / matched;
    result.dice_loss = dice / matched;
  }
  result.loss = w.w_cls * result.class_loss + w.w_bce * result.bce_loss +
                w.w_dice * result.dice_loss;
  return result;
}

}  // namespace matis
