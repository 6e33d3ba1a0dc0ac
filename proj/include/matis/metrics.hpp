#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "matis/annotation.hpp"
#include "matis/inference.hpp"
#include "matis/proposal.hpp"

namespace matis {

using ClassIous = std::map<ClassId, std::optional<double>>;

/// IoU of the per-class union of predictions against the per-class union of
/// ground truth, for every class present on either side.
ClassIous frame_class_ious(std::span<const Region> preds, const FrameAnnotation& gt);

struct FrameScore {
  std::string frame_id;
  std::optional<double> miou;  // over gt classes
  std::optional<double> iou;   // over gt and predicted classes
};

struct EvalReport {
  double miou = 0.0;
  double iou = 0.0;
  double mciou = 0.0;
  std::vector<std::optional<double>> per_class;  // index class - 1
  std::vector<FrameScore> per_frame;
  std::optional<double> stddev;
};

/// mIoU: frame mean over gt classes. IoU: frame mean over gt and predicted
/// classes (false positives score 0). mcIoU: mean over classes of the
/// per-class mean across frames where the class appears on either side.
/// Frames are processed in frame-id order; throws FrameIdMismatch when the
/// two sides do not cover the same frame ids.
EvalReport evaluate(std::span<const FrameRegions> preds, std::span<const FrameAnnotation> gts,
                    int num_classes);

enum class UpperBoundSource { Selected, All };

struct UpperBoundOptions {
  UpperBoundSource source = UpperBoundSource::Selected;
  /// One candidate per gt instance at most (greedy on descending IoU) instead
  /// of independent per-instance best matches.
  bool injective = false;
};

/// Oracle relabeling: each gt instance takes the candidate mask of highest
/// IoU and relabels it with the gt class; unmatched candidates are dropped.
std::vector<FrameRegions> oracle_relabel(std::span<const ProposalSet> proposals,
                                         std::span<const FrameAnnotation> gts,
                                         const InferenceConfig& cfg,
                                         const UpperBoundOptions& options);

EvalReport upper_bound(std::span<const ProposalSet> proposals,
                       std::span<const FrameAnnotation> gts, const InferenceConfig& cfg,
                       const UpperBoundOptions& options, int num_classes);

/// Per-class score thresholds for the Composed strategy. Each class takes the
/// grid value maximizing its own mcIoU term; ties keep the larger threshold.
/// Class k values come from cfg.
std::vector<double> calibrate_thresholds(std::span<const ProposalSet> proposals,
                                         std::span<const FrameAnnotation> gts,
                                         const InferenceConfig& cfg, int num_classes,
                                         std::span<const double> grid);

struct FoldSummary {
  double mean = 0.0;
  std::optional<double> stddev;  // sample standard deviation, needs >= 2 folds
};

FoldSummary fold_summary(std::span<const double> values);

void to_json(nlohmann::json& j, const EvalReport& report);
void from_json(const nlohmann::json& j, EvalReport& report);

/// Aligned text table: one row per named report, overall metrics then
/// per-class columns, values in percent.
std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows,
                         const std::vector<std::string>& class_names);

}  // namespace matis
