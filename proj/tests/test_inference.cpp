#include <random>

#include <gtest/gtest.h>

#include "matis/error.hpp"
#include "matis/inference.hpp"
#include "selection_props.hpp"
#include "test_util.hpp"

using namespace matis;

namespace {

SoftMask blob(int h, int w, int r0, int c0, int r1, int c1) {
  SoftMask m(h, w, 0.1);
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) m.at(r, c) = 0.9;
  }
  return m;
}

ProposalSet five_of_class_one() {
  ProposalSet ps;
  const double scores[] = {0.9, 0.8, 0.7, 0.6, 0.5};
  for (int i = 0; i < 5; ++i) {
    ps.proposals.push_back(testutil::proposal_with(3, 1, scores[i], blob(8, 8, i, 0, i + 2, 4)));
  }
  return ps;
}

std::vector<int> queries(const std::vector<Region>& regions) {
  std::vector<int> q;
  for (const auto& r : regions) q.push_back(r.query);
  return q;
}

}  // namespace

TEST(Select, StrategyNames) {
  const std::vector<std::string> names{"all", "nms", "thresh05", "top4", "per-class-thresh",
                                       "top-k-per-class", "composed"};
  ASSERT_EQ(all_strategies().size(), names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    EXPECT_EQ(strategy_name(all_strategies()[i]), names[i]);
    EXPECT_EQ(parse_strategy(names[i]), all_strategies()[i]);
  }
  try {
    parse_strategy("best");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigInvalid);
  }
}

TEST(Select, AllMasksKeepsRealArgmax) {
  ProposalSet ps;
  for (int q = 0; q < 6; ++q) {
    std::vector<double> probs{0.1, 0.1, 0.8};  // no-object wins
    if (q == 1 || q == 3 || q == 4) probs = {0.7, 0.2, 0.1};
    ps.proposals.emplace_back(probs, blob(8, 8, 0, 0, 4, 4));
  }
  InferenceConfig cfg;
  cfg.strategy = Strategy::AllMasks;
  EXPECT_EQ(queries(select(ps, cfg)), (std::vector<int>{1, 3, 4}));
}

TEST(Select, TopKPerClass) {
  InferenceConfig cfg = InferenceConfig::defaults(Strategy::TopKPerClass, {true, false, false});
  EXPECT_EQ(queries(select(five_of_class_one(), cfg)), (std::vector<int>{0, 1}));
}

TEST(Select, ComposedThresholdThenTopK) {
  InferenceConfig cfg = InferenceConfig::defaults(Strategy::Composed, {true, false, false});
  cfg.class_thresholds[0] = 0.75;
  EXPECT_EQ(queries(select(five_of_class_one(), cfg)), (std::vector<int>{0, 1}));
  cfg.class_thresholds[0] = 0.85;
  EXPECT_EQ(queries(select(five_of_class_one(), cfg)), (std::vector<int>{0}));
}

TEST(Select, GlobalStrategies) {
  InferenceConfig cfg;
  cfg.strategy = Strategy::GlobalThreshold;
  cfg.global_threshold = 0.65;
  EXPECT_EQ(queries(select(five_of_class_one(), cfg)), (std::vector<int>{0, 1, 2}));
  cfg.strategy = Strategy::TopKGlobal;
  cfg.global_k = 4;
  EXPECT_EQ(queries(select(five_of_class_one(), cfg)), (std::vector<int>{0, 1, 2, 3}));
}

TEST(Select, DropsEmptyBinarizedMasks) {
  ProposalSet ps;
  ps.proposals.push_back(testutil::proposal_with(2, 1, 0.9, SoftMask(4, 4, 0.2)));
  InferenceConfig cfg;
  cfg.strategy = Strategy::AllMasks;
  EXPECT_TRUE(select(ps, cfg).empty());
  cfg.binarize_threshold = 0.1;
  EXPECT_EQ(select(ps, cfg).size(), 1u);
}

TEST(Select, TiesBrokenByQueryIndex) {
  ProposalSet ps;
  for (int q = 0; q < 4; ++q) ps.proposals.push_back(testutil::proposal_with(2, 1, 0.6, blob(6, 6, 0, 0, 3, 3)));
  InferenceConfig cfg = InferenceConfig::defaults(Strategy::TopKPerClass, {true, false});
  EXPECT_EQ(queries(select(ps, cfg)), (std::vector<int>{0, 1}));
}

TEST(Select, InvalidConfig) {
  InferenceConfig cfg;
  cfg.class_k = {0};
  EXPECT_THROW(select(five_of_class_one(), cfg), Error);
  cfg = InferenceConfig{};
  cfg.global_threshold = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Select, JsonRoundTrip) {
  InferenceConfig cfg = InferenceConfig::defaults(Strategy::Nms, {true, false, true});
  cfg.class_thresholds = {0.3, 0.6, 0.9};
  cfg.nms_iou = 0.4;
  const InferenceConfig back = nlohmann::json(cfg).get<InferenceConfig>();
  EXPECT_EQ(back.strategy, Strategy::Nms);
  EXPECT_EQ(back.class_thresholds, cfg.class_thresholds);
  EXPECT_EQ(back.class_k, cfg.class_k);
  EXPECT_EQ(back.nms_iou, 0.4);
}

TEST(Nms, IdenticalMasks) {
  BinaryMask m(4, 4, std::vector<std::uint8_t>(16, 1));
  std::vector<Region> regions{{1, m, 0.8, 1}, {2, m, 0.9, 0}};
  const auto kept = nms(regions, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
}

TEST(Nms, DisjointKept) {
  BinaryMask a(2, 2, {1, 1, 0, 0}), b(2, 2, {0, 0, 1, 1});
  EXPECT_EQ(nms({{1, a, 0.9, 0}, {1, b, 0.8, 1}}, 0.1).size(), 2u);
  // suppression is IoU >= threshold, so a zero threshold keeps one region
  EXPECT_EQ(nms({{1, a, 0.9, 0}, {1, b, 0.8, 1}}, 0.0).size(), 1u);
}

TEST(Nms, GreedyTrace) {
  auto strip = [](int c0, int c1) {
    BinaryMask m(1, 60);
    for (int c = c0; c < c1; ++c) m.set(0, c);
    return m;
  };
  const BinaryMask a = strip(0, 40), b = strip(10, 50), c = strip(20, 60);
  ASSERT_DOUBLE_EQ(*mask_iou(a, b), 0.6);
  ASSERT_DOUBLE_EQ(*mask_iou(b, c), 0.6);
  ASSERT_DOUBLE_EQ(*mask_iou(a, c), 20.0 / 60.0);
  // b is suppressed by a, so nothing kept suppresses c
  const auto kept = nms({{1, b, 0.8, 1}, {1, a, 0.9, 0}, {1, c, 0.7, 2}}, 0.5);
  EXPECT_EQ(queries(kept), (std::vector<int>{0, 2}));
}

TEST(Select, PropertiesOnRandomSets) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const ProposalSet ps = testutil::random_proposal_set(rng, 16, 4, 12, 12);
    const std::string failure = testutil::check_selection_properties(ps, 4, rng);
    ASSERT_TRUE(failure.empty()) << "set " << i << ": " << failure;
  }
}
