#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "detguard/autodiff/rng.hpp"
#include "detguard/detector/boxes.hpp"
#include "detguard/detector/targets.hpp"
#include "detguard/detector/train.hpp"
#include "detguard/errors.hpp"
#include "detguard/scene/generator.hpp"
#include "oracles.hpp"

using namespace detguard;
using oracles::nms_oracle;
using oracles::random_boxes;

namespace {

DetectorConfig small_config() { return DetectorConfig{}; }

}  // namespace

TEST(Nms, TrivialCases) {
  EXPECT_EQ(nms({{10, 10, 5, 5}}, {0.3}, 0.5), std::vector<int>{0});
  EXPECT_EQ(nms({{10, 10, 5, 5}, {10, 10, 5, 5}}, {0.3, 0.9}, 0.5), std::vector<int>{1});
  EXPECT_TRUE(nms({}, {}, 0.5).empty());
}

TEST(Nms, MatchesPairwiseOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = trial % 2 ? 50 : 1 + rng.uniform_int(0, 63);
    const auto boxes = random_boxes(n, rng);
    std::vector<double> scores(static_cast<size_t>(n));
    for (auto& s : scores) s = std::round(rng.uniform() * 20) / 20;  // ties on purpose
    for (double t : {0.3, 0.5, 0.7}) ASSERT_EQ(nms(boxes, scores, t), nms_oracle(boxes, scores, t)) << trial << " " << t;
  }
}

TEST(BoxCoding, DecodeInvertsEncode) {
  Rng rng(5);
  const auto refs = random_boxes(30, rng), targets = random_boxes(30, rng);
  for (size_t i = 0; i < refs.size(); ++i) {
    const Box back = decode_delta(refs[i], encode_delta(refs[i], targets[i]));
    EXPECT_NEAR(back.cx, targets[i].cx, 1e-9);
    EXPECT_NEAR(back.cy, targets[i].cy, 1e-9);
    EXPECT_NEAR(back.w, targets[i].w, 1e-9);
    EXPECT_NEAR(back.h, targets[i].h, 1e-9);
  }
  const auto zero = encode_delta({20, 20, 10, 10}, {20, 20, 10, 10});
  for (double d : zero) EXPECT_EQ(d, 0.0);
}

TEST(BoxCoding, ClipStaysInside) {
  const Box c = clip_box({2, 60, 20, 20}, 64, 64);
  EXPECT_DOUBLE_EQ(c.x1(), 0.0);
  EXPECT_DOUBLE_EQ(c.x2(), 12.0);
  EXPECT_DOUBLE_EQ(c.y2(), 64.0);
}

TEST(Anchors, LayoutAndShapes) {
  const auto cfg = small_config();
  const auto anchors = make_anchors(8, 8, cfg.anchor_scales, cfg.anchor_ratios);
  ASSERT_EQ(anchors.size(), size_t(8 * 8 * 6));
  // index = a * cells + y * fw + x
  const Box& a = anchors[size_t(3 * 64 + 2 * 8 + 5)];
  EXPECT_DOUBLE_EQ(a.cx, 5 * 8 + 4);
  EXPECT_DOUBLE_EQ(a.cy, 2 * 8 + 4);
  EXPECT_NEAR(a.w * a.h, 24.0 * 24.0, 1e-9);
  EXPECT_NEAR(a.h / a.w, cfg.anchor_ratios[1], 1e-9);
}

TEST(Targets, NullBoxNeverYieldsPositives) {
  const auto cfg = small_config();
  const auto anchors = make_anchors(8, 8, cfg.anchor_scales, cfg.anchor_ratios);
  const Box original{32, 32, 24, 24};
  const std::vector<Annotation> poisoned{{2, {32, 32, 0, 0}}};
  const auto t = assign_anchor_targets(anchors, poisoned, 0.5, 0.3);
  for (size_t i = 0; i < anchors.size(); ++i) {
    EXPECT_EQ(t.labels[i], 0) << i;
    EXPECT_EQ(t.matched[i], -1);
  }
  const auto r = assign_roi_targets({original, {30, 31, 20, 22}}, poisoned, 0.5);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0}));

  const std::vector<Annotation> mixed{{2, {32, 32, 0, 0}}, {4, {12, 12, 16, 16}}};
  const auto t2 = assign_anchor_targets(anchors, mixed, 0.5, 0.3);
  for (size_t i = 0; i < anchors.size(); ++i)
    if (iou(anchors[i], original) >= 0.5) EXPECT_EQ(t2.labels[i], 0);
  EXPECT_GT(std::count(t2.labels.begin(), t2.labels.end(), 1), 0);
  const auto r2 = assign_roi_targets({original, {12, 12, 16, 16}}, mixed, 0.5);
  EXPECT_EQ(r2.labels, (std::vector<int>{0, 4}));
  EXPECT_EQ(r2.matched[1], 1);
}

TEST(Targets, BestAnchorClaimedEvenBelowThreshold) {
  const std::vector<Box> anchors{{10, 10, 30, 30}, {50, 50, 30, 30}};
  const auto t = assign_anchor_targets(anchors, {{1, {12, 12, 12, 12}}}, 0.5, 0.3);
  EXPECT_EQ(t.labels[0], 1);
  EXPECT_EQ(t.labels[1], 0);
}

TEST(Targets, SubsampleRespectsBatchAndFraction) {
  Rng rng(2);
  std::vector<int> labels(300, 0);
  for (int i = 0; i < 100; ++i) labels[size_t(i)] = 1;
  subsample_labels(labels, 64, 0.25, rng);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 1), 16);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), 0), 48);
}

TEST(Model, ParameterPrefixesPartitionStore) {
  TwoStageDetector model(small_config(), 1);
  size_t covered = 0;
  for (const char* m : TwoStageDetector::kModules) {
    const auto names = model.params().names_with_prefix(m);
    EXPECT_FALSE(names.empty()) << m;
    covered += names.size();
  }
  EXPECT_EQ(covered, model.params().entries().size());
}

TEST(Model, RpnShapesAndInitialObjectness) {
  TwoStageDetector model(small_config(), 3);
  const auto scene = generate_scene(SceneSpec{}, 1, 0);
  const auto rpn = model.rpn_forward(scene.image);
  const auto cfg = model.config();
  ASSERT_EQ(rpn.objectness.size(), size_t(cfg.anchors_per_cell() * cfg.feature_size() * cfg.feature_size()));
  ASSERT_EQ(rpn.deltas.size(), rpn.objectness.size());
  const double mean = std::accumulate(rpn.objectness.begin(), rpn.objectness.end(), 0.0) / rpn.objectness.size();
  EXPECT_GE(mean, 0.3);
  EXPECT_LE(mean, 0.7);
  const auto again = model.rpn_forward(scene.image);
  EXPECT_EQ(again.objectness, rpn.objectness);
  EXPECT_THROW(model.rpn_forward(ad::Tensor({3, 32, 32})), ShapeError);
}

TEST(Model, ProposalsAndRoiOutputsObeyLaws) {
  TwoStageDetector model(small_config(), 4);
  const auto d = generate_dataset(5, SceneSpec{}, 2);
  for (const auto& s : d.scenes) {
    const auto props = model.propose(s.image);
    EXPECT_LE(int(props.size()), model.config().proposal_top_k);
    for (const auto& p : props) {
      EXPECT_GE(p.box.x1(), 0.0);
      EXPECT_GE(p.box.y1(), 0.0);
      EXPECT_LE(p.box.x2(), 64.0);
      EXPECT_LE(p.box.y2(), 64.0);
      EXPECT_GE(p.objectness, 0.0);
      EXPECT_LE(p.objectness, 1.0);
    }
    const auto recs = model.roi_head_forward(s.image, props);
    ASSERT_EQ(recs.size(), props.size());
    for (const auto& r : recs) {
      ASSERT_EQ(r.roi_class_scores.size(), 6u);
      EXPECT_NEAR(std::accumulate(r.roi_class_scores.begin(), r.roi_class_scores.end(), 0.0), 1.0, 1e-6);
      EXPECT_EQ(r.roi_box_delta.size(), 20u);
    }
    EXPECT_TRUE(model.roi_head_forward(s.image, {}).empty());
  }
}

TEST(Model, DetectFilterLaws) {
  TwoStageDetector model(small_config(), 4);
  const auto s = generate_scene(SceneSpec{}, 2, 1);
  EXPECT_TRUE(model.detect(s.image, 1.0).empty());
  const auto dets = model.detect(s.image, 0.0);
  for (size_t i = 0; i < dets.size(); ++i) {
    EXPECT_GE(dets[i].class_label, 1);
    EXPECT_GE(dets[i].score, 0.0);
    if (i) EXPECT_LE(dets[i].score, dets[i - 1].score);
  }
  for (const auto& det : model.detect(s.image, 0.2)) EXPECT_GE(det.score, 0.2);
}

TEST(Model, ConfigValidation) {
  DetectorConfig c;
  c.proposal_top_k = 0;
  EXPECT_THROW(TwoStageDetector(c, 1), ConfigError);
  c = {};
  c.rpn_nms_iou = 1.0;
  EXPECT_THROW(TwoStageDetector(c, 1), ConfigError);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(TwoStageDetector(c, 1), ConfigError);
}

TEST(Loss, ZeroLambdaIsClassificationOnly) {
  auto c = small_config();
  c.lambda = 0.0;
  TwoStageDetector model(c, 5);
  const auto s = generate_scene(SceneSpec{}, 3, 0);
  ad::Graph g;
  Rng rng(1);
  const auto terms = compute_loss(model, g, s, rng);
  EXPECT_DOUBLE_EQ(terms.total.value()[0], terms.classification());
  EXPECT_GT(terms.localization(), 0.0);
  EXPECT_GE(terms.total.value()[0], 0.0);
}

TEST(Loss, SmoothL1VanishesAtTarget) {
  ad::Graph g;
  const auto x = g.input(ad::Tensor::vector({0.3, -1.2, 4.0}));
  EXPECT_EQ(g.smooth_l1(x, {0.3, -1.2, 4.0}, 1.0 / 9).value()[0], 0.0);
}

TEST(Train, LossTrendsDownOverFirst200Steps) {
  // The two-stage loss is not monotone early on: once the RPN starts finding
  // objects the RoI stage sees more foreground samples and its loss rises for
  // a while. The smoothed curve must still trend down.
  const auto d = generate_dataset(200, SceneSpec{}, 21);
  TwoStageDetector model(small_config(), 9);
  TrainOptions opt;
  opt.schedule.epochs = 4;  // 200 scenes / batch 4 = 50 steps per epoch
  opt.schedule.lr_drop_epochs = {};
  opt.seed = 3;
  const auto curve = train(model, d.scenes, opt);
  ASSERT_EQ(curve.step_loss.size(), 200u);
  std::vector<double> ma;
  for (size_t i = 4; i < curve.step_loss.size(); ++i)
    ma.push_back(std::accumulate(curve.step_loss.begin() + long(i) - 4, curve.step_loss.begin() + long(i) + 1, 0.0) / 5);
  const double n = double(ma.size()), mx = (n - 1) / 2;
  const double my = std::accumulate(ma.begin(), ma.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < ma.size(); ++i) {
    sxy += (double(i) - mx) * (ma[i] - my);
    sxx += (double(i) - mx) * (double(i) - mx);
  }
  EXPECT_LT(sxy / sxx, 0.0);
  EXPECT_LT(ma.back(), 0.75 * ma.front());
}

TEST(Train, FixedSeedGivesBitIdenticalParameters) {
  const auto d = generate_dataset(16, SceneSpec{}, 4);
  TrainOptions opt;
  opt.schedule.epochs = 2;
  opt.seed = 8;
  TwoStageDetector a(small_config(), 2), b(small_config(), 2);
  const auto ca = train(a, d.scenes, opt);
  const auto cb = train(b, d.scenes, opt);
  EXPECT_EQ(a.params().checksum(), b.params().checksum());
  EXPECT_EQ(ca.step_loss, cb.step_loss);
  TwoStageDetector c(small_config(), 2);
  opt.seed = 9;
  train(c, d.scenes, opt);
  EXPECT_NE(a.params().checksum(), c.params().checksum());
}

TEST(Train, DivergenceIsReported) {
  const auto d = generate_dataset(8, SceneSpec{}, 4);
  TwoStageDetector model(small_config(), 2);
  model.params().at("roi_cls_head.fc2.bias")[0] = std::nan("");
  TrainOptions opt;
  opt.schedule.epochs = 1;
  EXPECT_THROW(train(model, d.scenes, opt), DivergenceError);
  EXPECT_THROW(train(model, {}, opt), ConfigError);
}
