#pragma once

#include <string>
#include <vector>

#include "matis/mask.hpp"

namespace matis {

/// Per-pixel foreground probabilities, row-major.
struct SoftMask {
  int height = 0;
  int width = 0;
  std::vector<double> probs;

  SoftMask() = default;
  SoftMask(int h, int w, double fill = 0.0)
      : height(h), width(w), probs(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int row, int col) { return probs[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const {
    return probs[static_cast<std::size_t>(row) * width + col];
  }

  BinaryMask binarize(double threshold) const;
  static SoftMask from_binary(const BinaryMask& mask);
};

/// One query's output: probabilities over C real classes plus a trailing
/// no-object entry, and its soft mask. Real class c (1-based) lives at
/// class_probs[c - 1].
class RegionProposal {
 public:
  RegionProposal() = default;
  RegionProposal(std::vector<double> class_probs, SoftMask soft_mask);

  const std::vector<double>& class_probs() const noexcept { return class_probs_; }
  const SoftMask& soft_mask() const noexcept { return soft_mask_; }

  int num_classes() const noexcept { return static_cast<int>(class_probs_.size()) - 1; }
  double prob(ClassId cls) const { return class_probs_.at(static_cast<std::size_t>(cls - 1)); }
  double no_object_prob() const noexcept { return class_probs_.back(); }

  /// Max probability over real classes; the no-object entry never scores.
  double score() const noexcept { return score_; }
  ClassId argmax_class() const noexcept { return argmax_class_; }
  /// True when a real class beats no-object.
  bool is_object() const noexcept { return score_ > no_object_prob(); }

 private:
  std::vector<double> class_probs_;
  SoftMask soft_mask_;
  double score_ = 0.0;
  ClassId argmax_class_ = 1;
};

struct ProposalSet {
  std::string frame_id;
  std::vector<RegionProposal> proposals;

  int size() const noexcept { return static_cast<int>(proposals.size()); }
};

/// A class-labeled binary region, the output of selection.
struct Region {
  ClassId cls = 0;
  BinaryMask mask;
  double score = 1.0;
  int query = -1;  // originating proposal index, -1 when unknown
};

struct FrameRegions {
  std::string frame_id;
  std::vector<Region> regions;
};

}  // namespace matis
