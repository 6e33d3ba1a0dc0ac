#pragma once

#include <span>
#include <utility>
#include <vector>

#include "matis/annotation.hpp"
#include "matis/proposal.hpp"

namespace matis {

/// Dense rows x cols cost matrix, row-major. Rows are proposals, columns
/// ground-truth instances.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(int rows, int cols, double fill = 0.0);
  CostMatrix(int rows, int cols, std::vector<double> entries);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  double operator()(int r, int c) const { return entries_[index(r, c)]; }
  double& operator()(int r, int c) { return entries_[index(r, c)]; }

 private:
  std::size_t index(int r, int c) const noexcept {
    return static_cast<std::size_t>(r) * cols_ + c;
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> entries_;
};

/// One matched (proposal row, gt column) pair.
struct Match {
  int row = 0;
  int col = 0;
  friend bool operator==(const Match&, const Match&) = default;
};

/// Matches sorted by column. When rows >= cols every column is matched;
/// otherwise every row is.
using Assignment = std::vector<Match>;

/// Exact minimum-cost assignment via shortest augmenting paths, O(n^2 m).
/// Throws EmptyMatrix when rows == 0 and cols > 0; cols == 0 yields an
/// empty assignment. Non-finite entries throw NonFiniteInput.
Assignment hungarian(const CostMatrix& cost);

double assignment_cost(const CostMatrix& cost, const Assignment& assignment);

struct MatchWeights {
  double w_cls = 2.0;
  double w_bce = 5.0;
  double w_dice = 5.0;
  /// Class-loss weight of proposals matched to nothing.
  double no_object_weight = 0.1;

  void validate() const;
};

/// Per-pixel mean binary cross entropy of probabilities against bits.
double mask_bce(std::span<const double> probs, std::span<const std::uint8_t> bits);

/// 1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1).
double mask_dice_loss(std::span<const double> probs, std::span<const std::uint8_t> bits);

double pair_cost(const RegionProposal& proposal, ClassId gt_class, const BinaryMask& gt_mask,
                 const MatchWeights& w);

CostMatrix cost_matrix(const ProposalSet& proposals, const FrameAnnotation& gt,
                       const MatchWeights& w);

struct CriterionResult {
  double loss = 0.0;
  double class_loss = 0.0;
  double bce_loss = 0.0;
  double dice_loss = 0.0;
  Assignment assignment;
};

/// Set-prediction loss: Hungarian matching on pair_cost, then weighted class
/// cross entropy (unmatched proposals toward no-object at reduced weight)
/// plus mask BCE and Dice averaged over matched pairs.
CriterionResult set_criterion(const ProposalSet& proposals, const FrameAnnotation& gt,
                              const MatchWeights& w);

/// Sum that does not depend on the order of the terms.
double order_independent_sum(std::vector<double> terms);

}  // namespace matis
