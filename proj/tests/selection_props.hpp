#pragma once

// Invariants every selection strategy must satisfy on one proposal set.
// Returns an empty string when all hold, otherwise the first violation.

#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "matis/inference.hpp"

namespace testutil {

inline std::set<int> queries_of(const std::vector<matis::Region>& regions) {
  std::set<int> out;
  for (const auto& r : regions) out.insert(r.query);
  return out;
}

inline bool subset(const std::set<int>& a, const std::set<int>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

inline std::string check_selection_properties(const matis::ProposalSet& ps, int num_classes,
                                              std::mt19937_64& rng) {
  using namespace matis;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> kdist(1, 3);
  InferenceConfig cfg;
  cfg.nms_iou = 0.2 + 0.6 * u(rng);
  cfg.global_k = kdist(rng) + 1;
  for (int c = 0; c < num_classes; ++c) {
    cfg.class_thresholds.push_back(std::round(u(rng) * 20.0) / 20.0);
    cfg.class_k.push_back(kdist(rng));
  }

  auto run = [&](Strategy s, const InferenceConfig& base) {
    InferenceConfig c = base;
    c.strategy = s;
    return select(ps, c);
  };
  const auto all = run(Strategy::AllMasks, cfg);
  const auto all_q = queries_of(all);
  std::map<Strategy, std::vector<Region>> out;
  for (Strategy s : all_strategies()) {
    out[s] = run(s, cfg);
    if (!subset(queries_of(out[s]), all_q)) return std::string(strategy_name(s)) + " not within all";
    if (queries_of(out[s]).size() != out[s].size()) return std::string(strategy_name(s)) + " repeats a query";
    if (run(s, cfg).size() != out[s].size()) return std::string(strategy_name(s)) + " not deterministic";
    for (std::size_t i = 1; i < out[s].size(); ++i) {
      const auto& a = out[s][i - 1];
      const auto& b = out[s][i];
      if (a.score < b.score || (a.score == b.score && a.query > b.query)) {
        return std::string(strategy_name(s)) + " output order";
      }
    }
  }
  for (const auto& r : all) {
    const auto& p = ps.proposals[r.query];
    if (!p.is_object() || r.cls != p.argmax_class() || r.mask.empty()) return "all: bad region";
  }

  std::map<ClassId, int> count;
  for (const auto& r : out[Strategy::TopKPerClass]) ++count[r.cls];
  for (const auto& [cls, n] : count) {
    if (n > cfg.k_for(cls)) return "top-k-per-class exceeds k";
  }
  count.clear();
  for (const auto& r : out[Strategy::Composed]) ++count[r.cls];
  for (const auto& [cls, n] : count) {
    if (n > cfg.k_for(cls)) return "composed exceeds k";
  }

  const auto& kept = out[Strategy::Nms];
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (mask_iou(kept[i].mask, kept[j].mask).value_or(0.0) >= cfg.nms_iou) return "nms pair overlaps";
    }
  }

  const auto composed = queries_of(out[Strategy::Composed]);
  if (!subset(composed, queries_of(out[Strategy::TopKPerClass]))) return "composed not within top-k";
  if (!subset(composed, queries_of(out[Strategy::PerClassThreshold]))) return "composed not within thresholds";

  // order independence of the composition: top-k then threshold
  {
    std::set<int> alt;
    for (const auto& r : out[Strategy::TopKPerClass]) {
      if (r.score >= cfg.threshold_for(r.cls)) alt.insert(r.query);
    }
    if (alt != composed) return "composition depends on order";
  }

  // monotonicity in one class's tau and k
  std::uniform_int_distribution<int> pick(0, num_classes - 1);
  const int c = pick(rng);
  InferenceConfig raised_tau = cfg;
  raised_tau.class_thresholds[c] = std::min(1.0, cfg.class_thresholds[c] + 0.1 + 0.3 * u(rng));
  InferenceConfig raised_k = cfg;
  raised_k.class_k[c] += 1;
  for (Strategy s : {Strategy::PerClassThreshold, Strategy::Composed}) {
    if (!subset(queries_of(run(s, raised_tau)), queries_of(out[s]))) return "raising tau added a region";
  }
  for (Strategy s : {Strategy::TopKPerClass, Strategy::Composed}) {
    if (!subset(queries_of(out[s]), queries_of(run(s, raised_k)))) return "raising k removed a region";
  }
  InferenceConfig raised_global = cfg;
  raised_global.global_threshold = std::min(1.0, cfg.global_threshold + 0.2);
  if (!subset(queries_of(run(Strategy::GlobalThreshold, raised_global)),
              queries_of(out[Strategy::GlobalThreshold]))) {
    return "raising global tau added a region";
  }
  InferenceConfig raised_global_k = cfg;
  raised_global_k.global_k += 1;
  if (!subset(queries_of(out[Strategy::TopKGlobal]), queries_of(run(Strategy::TopKGlobal, raised_global_k)))) {
    return "raising global k removed a region";
  }
  return "";
}

}  // namespace testutil
