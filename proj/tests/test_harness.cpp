#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "detguard/autodiff/rng.hpp"
#include "detguard/errors.hpp"
#include "detguard/harness/metrics.hpp"
#include "detguard/scene/generator.hpp"
#include "oracles.hpp"

using namespace detguard;
using oracles::ap_oracle;
using oracles::hand_cases;

namespace {

Dataset single_scene_dataset() {
  Dataset d;
  d.scenes.push_back(generate_scene(SceneSpec{}, 1, 0));
  d.scenes.push_back(generate_scene(SceneSpec{}, 1, 1));
  return d;
}

DetectionsPerImage echo(const Dataset& d) {
  DetectionsPerImage out;
  for (const auto& s : d.scenes) {
    out.emplace_back();
    for (const auto& a : s.annotations) out.back().push_back({a.class_label, a.box, 1.0});
  }
  return out;
}

}  // namespace

TEST(AveragePrecision, TrivialCases) {
  const std::vector<GtBox> one{{0, {20, 20, 10, 10}}};
  EXPECT_DOUBLE_EQ(average_precision({{0, {20, 20, 10, 10}, 0.9}}, one, 0.5).ap, 1.0);
  EXPECT_DOUBLE_EQ(average_precision({}, one, 0.5).ap, 0.0);
  const auto none = average_precision({}, {}, 0.5);
  EXPECT_DOUBLE_EQ(none.ap, 1.0);
  EXPECT_FALSE(none.counted);
  const auto fp_only = average_precision({{0, {5, 5, 4, 4}, 0.9}}, {}, 0.5);
  EXPECT_DOUBLE_EQ(fp_only.ap, 0.0);
  EXPECT_FALSE(fp_only.counted);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  const auto cases = hand_cases();
  ASSERT_EQ(cases.size(), 20u);
  for (size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    std::vector<GtBox> gts = c.gts;
    EXPECT_NEAR(average_precision(c.dets, gts, c.thresh).ap, ap_oracle(c.dets, gts, c.thresh), 1e-9) << "case " << i;
  }
  // Hand value for case 0 at IoU 0.5: TP,FP,TP,FP,TP -> precisions 1, 2/3, 3/5 at recalls 1/3, 2/3, 1.
  const double expected = (34 * 1.0 + 33 * (2.0 / 3.0) + 34 * 0.6) / 101.0;
  EXPECT_NEAR(average_precision(cases[0].dets, cases[0].gts, 0.5).ap, expected, 1e-12);
}

TEST(MetricSuite, PerfectDetectorScoresOne) {
  const auto d = generate_dataset(20, SceneSpec{}, 4);
  const auto m = evaluate_detections(echo(d), d, EvalConfig{});
  for (double v : m.values()) EXPECT_TRUE(v == 1.0 || v == -1.0) << v;
  EXPECT_EQ(m.ap, 1.0);
}

TEST(MetricSuite, ThresholdMonotonicity) {
  // AP50 >= AP75 and AP50 >= AP on jittered detections. AP75 >= AP is not a
  // law: the 0.50:0.95 mean can exceed AP75.
  Rng rng(8);
  const auto d = generate_dataset(40, SceneSpec{}, 6);
  for (int trial = 0; trial < 20; ++trial) {
    auto dets = echo(d);
    for (auto& img : dets)
      for (auto& det : img) {
        det.box.cx += rng.uniform(-3, 3);
        det.box.w *= rng.uniform(0.8, 1.2);
        det.score = rng.uniform();
        if (rng.bernoulli(0.2)) det.class_label = 1 + det.class_label % 5;
      }
    const auto m = evaluate_detections(dets, d, EvalConfig{});
    EXPECT_GE(m.ap50, m.ap75);
    EXPECT_GE(m.ap50, m.ap);
  }
}

TEST(MetricSuite, SizeBucketsPartitionGroundTruth) {
  Dataset d;
  LabeledScene s;
  s.image = ad::Tensor({3, 64, 64});
  s.annotations = {{1, {10, 10, 12, 12}}, {2, {40, 40, 20, 20}}, {3, {30, 30, 36, 36}}};
  d.scenes.push_back(s);
  DetectionsPerImage dets{{{1, {10, 10, 12, 12}, 0.9}}};
  const auto m = evaluate_detections(dets, d, EvalConfig{});
  EXPECT_EQ(m.ap_s, 1.0);
  EXPECT_EQ(m.ap_m, 0.0);
  EXPECT_EQ(m.ap_l, 0.0);
  Dataset only_small;
  s.annotations = {{1, {10, 10, 12, 12}}};
  only_small.scenes.push_back(s);
  const auto m2 = evaluate_detections(dets, only_small, EvalConfig{});
  EXPECT_EQ(m2.ap_m, -1.0);
  EXPECT_EQ(m2.ap_l, -1.0);
}

TEST(AttackSuccess, TrivialModels) {
  const auto d = single_scene_dataset();
  std::vector<PoisonRecord> victims;
  for (int i = 0; i < int(d.size()); ++i) {
    const auto& a = d.scenes[size_t(i)].annotations[0];
    victims.push_back({i, i, 0, a.class_label, a.box, {}});
  }
  const EvalConfig cfg;
  EXPECT_EQ(attack_success_rate(DetectionsPerImage(d.size()), victims, cfg), 1.0);
  EXPECT_EQ(attack_success_rate(echo(d), victims, cfg), 0.0);
  EXPECT_EQ(victim_recall(echo(d), victims, cfg), 1.0);
  auto wrong_class = echo(d);
  for (auto& img : wrong_class)
    for (auto& det : img) det.class_label = 1 + det.class_label % 5;
  EXPECT_EQ(attack_success_rate(wrong_class, victims, cfg), 1.0);
  auto low_score = echo(d);
  for (auto& img : low_score)
    for (auto& det : img) det.score = 0.3;
  EXPECT_EQ(attack_success_rate(low_score, victims, cfg), 1.0);
}

TEST(EvalConfig, Validation) {
  EvalConfig c;
  c.iou_thresholds = {0.75, 0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.medium_max = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tau = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
