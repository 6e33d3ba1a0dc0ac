#include "matis/proposal.hpp"

#include <cmath>

#include "matis/annotation.hpp"
#include "matis/error.hpp"

namespace matis {

BinaryMask SoftMask::binarize(double threshold) const {
  BinaryMask out(height, width);
  auto bits = out.bits();
  for (std::size_t i = 0; i < probs.size(); ++i) bits[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

SoftMask SoftMask::from_binary(const BinaryMask& mask) {
  SoftMask out(mask.height(), mask.width());
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) out.probs[i] = bits[i];
  return out;
}

RegionProposal::RegionProposal(std::vector<double> class_probs, SoftMask soft_mask)
    : class_probs_(std::move(class_probs)), soft_mask_(std::move(soft_mask)) {
  if (class_probs_.size() < 2) {
    throw Error(ErrorKind::ShapeMismatch, "class_probs needs at least one real class");
  }
  double sum = 0.0;
  for (double p : class_probs_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::NonFiniteInput, "class probability outside [0,1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw Error(ErrorKind::NonFiniteInput, "class probabilities do not sum to 1");
  }
  score_ = -1.0;
  for (std::size_t c = 0; c + 1 < class_probs_.size(); ++c) {
    if (class_probs_[c] > score_) {
      score_ = class_probs_[c];
      argmax_class_ = static_cast<ClassId>(c + 1);
    }
  }
}

std::vector<std::pair<ClassId, BinaryMask>> FrameAnnotation::labeled_masks() const {
  std::vector<std::pair<ClassId, BinaryMask>> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.emplace_back(inst.cls, inst.mask);
  return out;
}

}  // namespace matis
