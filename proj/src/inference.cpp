#include "matis/inference.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "matis/error.hpp"

namespace matis {

namespace {

constexpr std::array<std::pair<Strategy, std::string_view>, 7> kNames{{
    {Strategy::AllMasks, "all"},
    {Strategy::Nms, "nms"},
    {Strategy::GlobalThreshold, "thresh05"},
    {Strategy::TopKGlobal, "top4"},
    {Strategy::PerClassThreshold, "per-class-thresh"},
    {Strategy::TopKPerClass, "top-k-per-class"},
    {Strategy::Composed, "composed"},
}};

bool by_score(const Region& a, const Region& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.query < b.query;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  for (const auto& [strategy, name] : kNames) {
    if (strategy == s) return name;
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (const auto& [strategy, n] : kNames) {
    if (n == name) return strategy;
  }
  throw Error(ErrorKind::ConfigInvalid, "unknown strategy '" + std::string(name) + "'");
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> kAll = [] {
    std::vector<Strategy> v;
    for (const auto& [s, n] : kNames) v.push_back(s);
    return v;
  }();
  return kAll;
}

InferenceConfig InferenceConfig::defaults(Strategy strategy,
                                          const std::vector<bool>& multi_instance) {
  InferenceConfig cfg;
  cfg.strategy = strategy;
  cfg.class_thresholds.assign(multi_instance.size(), 0.5);
  for (bool multi : multi_instance) cfg.class_k.push_back(multi ? 2 : 1);
  return cfg;
}

double InferenceConfig::threshold_for(ClassId cls) const {
  const auto i = static_cast<std::size_t>(cls - 1);
  return i < class_thresholds.size() ? class_thresholds[i] : 0.5;
}

int InferenceConfig::k_for(ClassId cls) const {
  const auto i = static_cast<std::size_t>(cls - 1);
  return i < class_k.size() ? class_k[i] : 1;
}

void InferenceConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  bool ok = unit(global_threshold) && unit(nms_iou) && unit(binarize_threshold) && global_k >= 1;
  for (double t : class_thresholds) ok = ok && unit(t);
  for (int k : class_k) ok = ok && k >= 1;
  if (!ok) throw Error(ErrorKind::ConfigInvalid, "inference thresholds must lie in [0,1] and k >= 1");
}

void to_json(nlohmann::json& j, const InferenceConfig& cfg) {
  j = nlohmann::json{
      {"strategy", strategy_name(cfg.strategy)},
      {"global_threshold", cfg.global_threshold},
      {"global_k", cfg.global_k},
      {"nms_iou", cfg.nms_iou},
      {"class_thresholds", cfg.class_thresholds},
      {"class_k", cfg.class_k},
      {"binarize_threshold", cfg.binarize_threshold},
  };
}

void from_json(const nlohmann::json& j, InferenceConfig& cfg) {
  cfg = InferenceConfig{};
  if (j.contains("strategy")) cfg.strategy = parse_strategy(j.at("strategy").get<std::string>());
  cfg.global_threshold = j.value("global_threshold", cfg.global_threshold);
  cfg.global_k = j.value("global_k", cfg.global_k);
  cfg.nms_iou = j.value("nms_iou", cfg.nms_iou);
  cfg.class_thresholds = j.value("class_thresholds", cfg.class_thresholds);
  cfg.class_k = j.value("class_k", cfg.class_k);
  cfg.binarize_threshold = j.value("binarize_threshold", cfg.binarize_threshold);
  cfg.validate();
}

std::vector<Region> nms(std::vector<Region> regions, double iou_threshold) {
  std::stable_sort(regions.begin(), regions.end(), by_score);
  std::vector<Region> kept;
  for (auto& r : regions) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Region& k) {
      return mask_iou(k.mask, r.mask).value_or(0.0) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(r));
  }
  return kept;
}

std::vector<Region> select(const ProposalSet& proposals, const InferenceConfig& cfg) {
  cfg.validate();
  // candidate pool: object proposals with a non-empty binarized mask
  std::vector<Region> pool;
  for (int q = 0; q < proposals.size(); ++q) {
    const auto& p = proposals.proposals[q];
    if (!p.is_object()) continue;
    BinaryMask mask = p.soft_mask().binarize(cfg.binarize_threshold);
    if (mask.empty()) continue;
    pool.push_back(Region{p.argmax_class(), std::move(mask), p.score(), q});
  }
  std::stable_sort(pool.begin(), pool.end(), by_score);

  auto keep_if = [&](auto&& pred) {
    std::vector<Region> out;
    for (auto& r : pool) {
      if (pred(r)) out.push_back(std::move(r));
    }
    return out;
  };
  auto top_k_per_class = [&](std::vector<Region> in) {
    std::map<ClassId, int> taken;
    std::vector<Region> out;
    for (auto& r : in) {
      if (taken[r.cls] < cfg.k_for(r.cls)) {
        ++taken[r.cls];
        out.push_back(std::move(r));
      }
    }
    return out;
  };
  auto per_class_threshold = [&] {
    return keep_if([&](const Region& r) { return r.score >= cfg.threshold_for(r.cls); });
  };

  switch (cfg.strategy) {
    case Strategy::AllMasks:
      return pool;
    case Strategy::GlobalThreshold:
      return keep_if([&](const Region& r) { return r.score >= cfg.global_threshold; });
    case Strategy::TopKGlobal:
      if (pool.size() > static_cast<std::size_t>(cfg.global_k)) pool.resize(cfg.global_k);
      return pool;
    case Strategy::Nms:
      return nms(std::move(pool), cfg.nms_iou);
    case Strategy::PerClassThreshold:
      return per_class_threshold();
    case Strategy::TopKPerClass:
      return top_k_per_class(std::move(pool));
    case Strategy::Composed:
      return top_k_per_class(per_class_threshold());
  }
  return pool;
}

}  // namespace matis
