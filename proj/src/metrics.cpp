#include "matis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "matis/error.hpp"

namespace matis {

namespace {

std::vector<std::pair<ClassId, BinaryMask>> labeled(std::span<const Region> regions) {
  std::vector<std::pair<ClassId, BinaryMask>> out;
  out.reserve(regions.size());
  for (const auto& r : regions) out.emplace_back(r.cls, r.mask);
  return out;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

ClassIous frame_class_ious(std::span<const Region> preds, const FrameAnnotation& gt) {
  const auto pred_labeled = labeled(preds);
  const auto gt_labeled = gt.labeled_masks();
  const ClassMasks pred_union = class_union(pred_labeled);
  const ClassMasks gt_union = class_union(gt_labeled);

  ClassIous out;
  for (const auto& [cls, mask] : gt_union) {
    auto it = pred_union.find(cls);
    if (it == pred_union.end()) {
      out[cls] = mask.empty() ? std::nullopt : std::optional<double>(0.0);
    } else {
      out[cls] = mask_iou(it->second, mask);
    }
  }
  for (const auto& [cls, mask] : pred_union) {
    if (gt_union.count(cls)) continue;
    if (mask.height() != gt.height || mask.width() != gt.width) {
      throw Error(ErrorKind::DimensionMismatch, "prediction mask does not match frame dims");
    }
    out[cls] = mask.empty() ? std::nullopt : std::optional<double>(0.0);
  }
  return out;
}

EvalReport evaluate(std::span<const FrameRegions> preds, std::span<const FrameAnnotation> gts,
                    int num_classes) {
  std::map<std::string, const FrameRegions*> pred_by_id;
  for (const auto& p : preds) pred_by_id[p.frame_id] = &p;
  std::map<std::string, const FrameAnnotation*> gt_by_id;
  for (const auto& g : gts) gt_by_id[g.frame_id] = &g;
  if (pred_by_id.size() != preds.size() || gt_by_id.size() != gts.size()) {
    throw Error(ErrorKind::FrameIdMismatch, "duplicate frame ids");
  }
  if (pred_by_id.size() != gt_by_id.size() ||
      !std::equal(pred_by_id.begin(), pred_by_id.end(), gt_by_id.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw Error(ErrorKind::FrameIdMismatch, "prediction and annotation frame ids differ");
  }

  EvalReport report;
  std::vector<double> frame_miou, frame_iou;
  std::vector<std::vector<double>> class_values(num_classes);

  for (const auto& [id, gt] : gt_by_id) {
    const FrameRegions& pred = *pred_by_id.at(id);
    const ClassIous ious = frame_class_ious(pred.regions, *gt);
    std::set<ClassId> gt_classes;
    for (const auto& inst : gt->instances) gt_classes.insert(inst.cls);

    std::vector<double> over_gt, over_all;
    for (const auto& [cls, value] : ious) {
      if (!value) continue;
      over_all.push_back(*value);
      if (gt_classes.count(cls)) over_gt.push_back(*value);
      if (cls >= 1 && cls <= num_classes) class_values[cls - 1].push_back(*value);
    }
    FrameScore fs{id, mean_of(over_gt), mean_of(over_all)};
    if (fs.miou) frame_miou.push_back(*fs.miou);
    if (fs.iou) frame_iou.push_back(*fs.iou);
    report.per_frame.push_back(std::move(fs));
  }

  report.miou = mean_of(frame_miou).value_or(0.0);
  report.iou = mean_of(frame_iou).value_or(0.0);
  std::vector<double> class_means;
  for (const auto& values : class_values) {
    report.per_class.push_back(mean_of(values));
    if (report.per_class.back()) class_means.push_back(*report.per_class.back());
  }
  report.mciou = mean_of(class_means).value_or(0.0);
  return report;
}

std::vector<FrameRegions> oracle_relabel(std::span<const ProposalSet> proposals,
                                         std::span<const FrameAnnotation> gts,
                                         const InferenceConfig& cfg,
                                         const UpperBoundOptions& options) {
  std::map<std::string, const FrameAnnotation*> gt_by_id;
  for (const auto& g : gts) gt_by_id[g.frame_id] = &g;
  if (gt_by_id.size() != proposals.size()) {
    throw Error(ErrorKind::FrameIdMismatch, "proposal and annotation frame counts differ");
  }

  std::vector<FrameRegions> out;
  for (const auto& set : proposals) {
    auto it = gt_by_id.find(set.frame_id);
    if (it == gt_by_id.end()) {
      throw Error(ErrorKind::FrameIdMismatch, "no annotation for frame " + set.frame_id);
    }
    const FrameAnnotation& gt = *it->second;

    std::vector<Region> candidates;
    if (options.source == UpperBoundSource::Selected) {
      candidates = select(set, cfg);
    } else {
      for (int q = 0; q < set.size(); ++q) {
        const auto& p = set.proposals[q];
        BinaryMask m = p.soft_mask().binarize(cfg.binarize_threshold);
        if (!m.empty()) candidates.push_back(Region{p.argmax_class(), std::move(m), p.score(), q});
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Region& a, const Region& b) { return a.query < b.query; });

    // iou[g][k]
    std::vector<std::vector<double>> iou(gt.instances.size(),
                                         std::vector<double>(candidates.size(), 0.0));
    for (std::size_t g = 0; g < gt.instances.size(); ++g) {
      for (std::size_t k = 0; k < candidates.size(); ++k) {
        iou[g][k] = mask_iou(gt.instances[g].mask, candidates[k].mask).value_or(0.0);
      }
    }

    FrameRegions fr{set.frame_id, {}};
    if (!options.injective) {
      for (std::size_t g = 0; g < gt.instances.size(); ++g) {
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t k = 0; k < candidates.size(); ++k) {
          if (iou[g][k] > best_iou) {
            best_iou = iou[g][k];
            best = static_cast<int>(k);
          }
        }
        if (best >= 0) {
          Region r = candidates[best];
          r.cls = gt.instances[g].cls;
          fr.regions.push_back(std::move(r));
        }
      }
    } else {
      struct Pair {
        double iou;
        std::size_t g, k;
      };
      std::vector<Pair> pairs;
      for (std::size_t g = 0; g < gt.instances.size(); ++g) {
        for (std::size_t k = 0; k < candidates.size(); ++k) {
          if (iou[g][k] > 0.0) pairs.push_back({iou[g][k], g, k});
        }
      }
      std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.g != b.g) return a.g < b.g;
        return a.k < b.k;
      });
      std::vector<char> gt_used(gt.instances.size(), 0), cand_used(candidates.size(), 0);
      for (const auto& p : pairs) {
        if (gt_used[p.g] || cand_used[p.k]) continue;
        gt_used[p.g] = cand_used[p.k] = 1;
        Region r = candidates[p.k];
        r.cls = gt.instances[p.g].cls;
        fr.regions.push_back(std::move(r));
      }
    }
    out.push_back(std::move(fr));
  }
  return out;
}

EvalReport upper_bound(std::span<const ProposalSet> proposals,
                       std::span<const FrameAnnotation> gts, const InferenceConfig& cfg,
                       const UpperBoundOptions& options, int num_classes) {
  const auto relabeled = oracle_relabel(proposals, gts, cfg, options);
  return evaluate(relabeled, gts, num_classes);
}

std::vector<double> calibrate_thresholds(std::span<const ProposalSet> proposals,
                                         std::span<const FrameAnnotation> gts,
                                         const InferenceConfig& cfg, int num_classes,
                                         std::span<const double> grid) {
  if (proposals.size() != gts.size()) {
    throw Error(ErrorKind::FrameIdMismatch, "calibration needs one proposal set per frame");
  }
  if (grid.empty()) throw Error(ErrorKind::ConfigInvalid, "calibration grid is empty");
  InferenceConfig pool_cfg = cfg;
  pool_cfg.strategy = Strategy::AllMasks;

  // Per class and frame: scores of the class candidates in selection order
  // and the IoU obtained by keeping the first n of them.
  struct Entry {
    std::vector<double> scores;
    std::vector<std::optional<double>> iou_by_prefix;
  };
  std::vector<std::vector<Entry>> entries(static_cast<std::size_t>(num_classes));
  for (std::size_t f = 0; f < gts.size(); ++f) {
    if (proposals[f].frame_id != gts[f].frame_id) {
      throw Error(ErrorKind::FrameIdMismatch, "frame id mismatch: " + gts[f].frame_id);
    }
    const auto pool = select(proposals[f], pool_cfg);
    const ClassMasks gt_union = class_union(gts[f].labeled_masks());
    for (ClassId c = 1; c <= num_classes; ++c) {
      Entry e;
      std::vector<const Region*> cand;
      for (const auto& r : pool) {
        if (r.cls == c) cand.push_back(&r);
      }
      const std::size_t k = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(cfg.k_for(c)));
      const auto gt_it = gt_union.find(c);
      BinaryMask acc(gts[f].height, gts[f].width);
      for (std::size_t n = 0; n <= k; ++n) {
        if (n > 0) acc |= cand[n - 1]->mask;
        if (n == 0 && gt_it == gt_union.end()) {
          e.iou_by_prefix.push_back(std::nullopt);
        } else if (gt_it == gt_union.end()) {
          e.iou_by_prefix.push_back(0.0);
        } else {
          e.iou_by_prefix.push_back(mask_iou(acc, gt_it->second).value_or(0.0));
        }
      }
      for (std::size_t n = 0; n < k; ++n) e.scores.push_back(cand[n]->score);
      entries[static_cast<std::size_t>(c - 1)].push_back(std::move(e));
    }
  }

  std::vector<double> out;
  for (int c = 0; c < num_classes; ++c) {
    double best_value = -1.0;
    double best_tau = cfg.threshold_for(c + 1);
    for (double tau : grid) {
      std::vector<double> vals;
      for (const auto& e : entries[static_cast<std::size_t>(c)]) {
        std::size_t n = 0;
        while (n < e.scores.size() && e.scores[n] >= tau) ++n;
        if (e.iou_by_prefix[n]) vals.push_back(*e.iou_by_prefix[n]);
      }
      std::sort(vals.begin(), vals.end());
      const double value = mean_of(vals).value_or(0.0);
      if (value > best_value || (value == best_value && tau > best_tau)) {
        best_value = value;
        best_tau = tau;
      }
    }
    out.push_back(best_tau);
  }
  return out;
}

FoldSummary fold_summary(std::span<const double> values) {
  FoldSummary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

void to_json(nlohmann::json& j, const EvalReport& report) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : report.per_class) per_class.push_back(opt(v));
  nlohmann::json per_frame = nlohmann::json::array();
  for (const auto& f : report.per_frame) {
    per_frame.push_back({{"frame", f.frame_id}, {"miou", opt(f.miou)}, {"iou", opt(f.iou)}});
  }
  j = nlohmann::json{{"miou", report.miou},       {"iou", report.iou},
                     {"mciou", report.mciou},     {"per_class", per_class},
                     {"per_frame", per_frame},    {"stddev", opt(report.stddev)}};
}

void from_json(const nlohmann::json& j, EvalReport& report) {
  auto opt = [](const nlohmann::json& v) {
    return v.is_null() ? std::optional<double>() : std::optional<double>(v.get<double>());
  };
  report = EvalReport{};
  report.miou = j.at("miou").get<double>();
  report.iou = j.at("iou").get<double>();
  report.mciou = j.at("mciou").get<double>();
  for (const auto& v : j.at("per_class")) report.per_class.push_back(opt(v));
  for (const auto& f : j.value("per_frame", nlohmann::json::array())) {
    report.per_frame.push_back({f.at("frame").get<std::string>(), opt(f.at("miou")), opt(f.at("iou"))});
  }
  if (j.contains("stddev")) report.stddev = opt(j.at("stddev"));
}

std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows,
                         const std::vector<std::string>& class_names) {
  std::size_t label_width = 6;
  for (const auto& [name, r] : rows) label_width = std::max(label_width, name.size());
  std::vector<std::string> headers{"mIoU", "IoU", "mcIoU"};
  for (const auto& n : class_names) headers.push_back(n);

  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
    return std::string(buf);
  };

  std::ostringstream os;
  auto pad = [&](const std::string& s, std::size_t w, bool left) {
    if (s.size() >= w) return s;
    return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
  };
  os << pad("Method", label_width, true);
  for (const auto& h : headers) os << "  " << pad(h, 7, false);
  os << '\n';
  for (const auto& [name, r] : rows) {
    os << pad(name, label_width, true);
    os << "  " << pad(cell(r.miou), 7, false);
    os << "  " << pad(cell(r.iou), 7, false);
    os << "  " << pad(cell(r.mciou), 7, false);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      os << "  " << pad(cell(c < r.per_class.size() ? r.per_class[c] : std::nullopt), 7, false);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace matis
