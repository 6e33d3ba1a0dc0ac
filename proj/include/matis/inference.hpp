#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matis/proposal.hpp"

namespace matis {

enum class Strategy {
  AllMasks,
  Nms,
  GlobalThreshold,
  TopKGlobal,
  PerClassThreshold,
  TopKPerClass,
  Composed,
};

/// CLI names: all, nms, thresh05, top4,
/// per-class-thresh, top-k-per-class, composed.
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);
const std::vector<Strategy>& all_strategies();

struct InferenceConfig {
  Strategy strategy = Strategy::Composed;
  double global_threshold = 0.5;
  int global_k = 4;
  double nms_iou = 0.5;
  /// Indexed by class - 1.
  std::vector<double> class_thresholds;
  std::vector<int> class_k;
  double binarize_threshold = 0.5;

  /// Defaults for C classes: tau_c = 0.5, k_c = 2 for multi-instance classes else 1.
  static InferenceConfig defaults(Strategy strategy, const std::vector<bool>& multi_instance);

  double threshold_for(ClassId cls) const;
  int k_for(ClassId cls) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const InferenceConfig& cfg);
void from_json(const nlohmann::json& j, InferenceConfig& cfg);

/// Applies the configured selection strategy. Output regions are ordered by
/// descending score, ties by ascending query index.
std::vector<Region> select(const ProposalSet& proposals, const InferenceConfig& cfg);

/// Greedy class-agnostic suppression: keep a region iff its IoU with every
/// kept region is below iou_threshold.
std::vector<Region> nms(std::vector<Region> regions, double iou_threshold);

}  // namespace matis
