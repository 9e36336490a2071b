#include <gtest/gtest.h>

#include <cmath>

#include "detguard/autodiff/rng.hpp"
#include "detguard/errors.hpp"
#include "detguard/scene/generator.hpp"
#include "detguard/sentinel/sentinel.hpp"

using namespace detguard;

namespace {

ProposalRecord record(double r, double bg, Box box = {32, 32, 16, 16}) {
  ProposalRecord rec;
  rec.proposal = box;
  rec.rpn_objectness = r;
  rec.roi_class_scores.assign(6, (1.0 - bg) / 5.0);
  rec.roi_class_scores[0] = bg;
  rec.roi_box_delta.assign(20, 0.0);
  return rec;
}

ImageScores image(std::vector<double> scores) {
  ImageScores im;
  im.scores = std::move(scores);
  im.proposals.resize(im.scores.size());
  return im;
}

}  // namespace

TEST(ComparableScore, Definitions) {
  EXPECT_EQ(comparable_score(record(0.4, 1.0)).p, 0.0);
  auto uniform = record(0.3, 1.0 / 6.0);
  std::fill(uniform.roi_class_scores.begin(), uniform.roi_class_scores.end(), 1.0 / 6.0);
  EXPECT_NEAR(comparable_score(uniform).p, 5.0 / 6.0, 1e-15);
  const auto pair = comparable_score(record(0.9, 0.8));
  EXPECT_DOUBLE_EQ(pair.r, 0.9);
  EXPECT_NEAR(pair.p, 0.2, 1e-15);
}

TEST(InconsistencyScores, Arithmetic) {
  const auto s = inconsistency_scores({record(0.9, 0.8), record(0.25, 0.75), record(0.1, 0.3)});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_NEAR(s[0], 0.7, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  EXPECT_NEAR(s[2], 0.6, 1e-12);
  EXPECT_TRUE(inconsistency_scores(std::vector<ProposalRecord>{}).empty());
}

TEST(Summarize, FiltersAveragesAndJudges) {
  InconsistencyConfig cfg{0.2, 0.5};
  const auto rep = summarize({image({0.1, 0.7, 0.3}), image({0.2, 0.9})}, cfg);
  EXPECT_EQ(rep.retained, (std::vector<double>{0.7, 0.3, 0.9}));
  EXPECT_DOUBLE_EQ(rep.mu, (0.7 + 0.3 + 0.9) / 3);
  EXPECT_TRUE(rep.verdict);
  EXPECT_EQ(rep.score_count(), 5u);
  for (double s : rep.retained) EXPECT_GT(s, cfg.epsilon);
}

TEST(Summarize, EmptyFilteredSetIsNormal) {
  const auto rep = summarize({image({0.05, 0.1}), image({})}, {0.2, 0.3});
  EXPECT_TRUE(rep.retained.empty());
  EXPECT_EQ(rep.mu, 0.0);
  EXPECT_FALSE(rep.verdict);
}

TEST(Summarize, ThetaSplitsReferenceMeans) {
  // mu 0.55 (clean) and 0.67 (poisoned) against theta 0.58.
  EXPECT_FALSE(summarize({image({0.55})}, {0.2, 0.58}).verdict);
  EXPECT_TRUE(summarize({image({0.67})}, {0.2, 0.58}).verdict);
}

TEST(Summarize, MonotoneInEpsilonAndTheta) {
  Rng rng(4);
  std::vector<double> scores(200);
  for (auto& s : scores) s = rng.uniform();
  size_t last = scores.size() + 1;
  for (double eps = 0.0; eps < 0.95; eps += 0.05) {
    const auto rep = summarize({image(scores)}, {eps, 0.99});
    EXPECT_LE(rep.retained.size(), last);
    last = rep.retained.size();
  }
  bool prev = true;
  for (double theta = 0.25; theta < 1.0; theta += 0.05) {
    const bool v = summarize({image(scores)}, {0.2, theta}).verdict;
    EXPECT_TRUE(prev || !v);
    prev = v;
  }
}

TEST(Config, Validation) {
  EXPECT_THROW((InconsistencyConfig{0.5, 0.5}.validate()), ConfigError);
  EXPECT_THROW((InconsistencyConfig{-0.1, 0.5}.validate()), ConfigError);
  EXPECT_THROW((InconsistencyConfig{0.0, 0.0}.validate()), ConfigError);
  EXPECT_NO_THROW((InconsistencyConfig{0.0, 0.1}.validate()));
}

TEST(Calibration, EpsilonLeavesAtMostFivePercent) {
  Rng rng(1);
  std::vector<double> scores(1003);
  for (auto& s : scores) s = rng.uniform() * rng.uniform();
  const double eps = calibrate_epsilon(scores, 0.05);
  const auto above = std::count_if(scores.begin(), scores.end(), [&](double s) { return s > eps; });
  EXPECT_LE(above, long(0.05 * scores.size()));
  EXPECT_GE(above, long(0.05 * scores.size()) - 1);
  EXPECT_THROW(calibrate_epsilon({}), ConfigError);
}

TEST(Calibration, ThetaIsMidpoint) {
  EXPECT_DOUBLE_EQ(calibrate_theta({0.3, 0.4, 0.35}, {0.6, 0.5}), 0.45);
  EXPECT_THROW(calibrate_theta({0.3, 0.55}, {0.5, 0.6}), ConfigError);
  EXPECT_THROW(calibrate_theta({}, {0.5}), ConfigError);
}

TEST(Heatmap, ShapeAndCellMeans) {
  const std::vector<ProposalRecord> recs{record(0.9, 0.8, {5, 5, 8, 8}), record(0.5, 0.5, {6, 7, 8, 8}),
                                         record(0.8, 0.9, {40, 20, 8, 8})};
  const auto h = inconsistency_heatmap(recs, 64, 64, 16);
  EXPECT_EQ(h.rows, 4);
  EXPECT_EQ(h.cols, 4);
  EXPECT_NEAR(h.at(0, 0), (0.7 + 0.0) / 2, 1e-12);
  EXPECT_NEAR(h.at(1, 2), 0.7, 1e-12);
  EXPECT_EQ(h.at(3, 3), 0.0);
  EXPECT_EQ(h.argmax(), 1 * 4 + 2);  // ties resolve to the first in row-major order
  const auto empty = inconsistency_heatmap({}, 64, 64, 8);
  EXPECT_EQ(empty.rows, 8);
  for (double v : empty.values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(inconsistency_heatmap(recs, 64, 64, 7), ConfigError);
}

TEST(Heatmap, CsvHasHeaderAndRows) {
  const auto csv = heatmap_csv(inconsistency_heatmap({}, 64, 64, 32));
  EXPECT_EQ(csv, "row,c0,c1\n0,0,0\n1,0,0\n");
}

TEST(DetectBackdoor, ReproducibleOnModel) {
  TwoStageDetector model(DetectorConfig{}, 3);
  const auto probes = generate_dataset(6, SceneSpec{}, 2);
  const InconsistencyConfig cfg{0.1, 0.3};
  const auto a = detect_backdoor(model, probes, cfg);
  const auto b = detect_backdoor(model, probes, cfg);
  EXPECT_EQ(report_json(a), report_json(b));
  ASSERT_EQ(a.images.size(), probes.size());
  for (const auto& im : a.images) {
    EXPECT_EQ(im.scores.size(), im.proposals.size());
    for (double s : im.scores) {
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
  EXPECT_GE(a.mu, 0.0);
  EXPECT_LE(a.mu, 1.0);
  EXPECT_THROW(detect_backdoor(model, Dataset{}, cfg), ConfigError);
}

TEST(Screening, StampsPatchOnGrid) {
  const auto clean = generate_dataset(2, SceneSpec{}, 2);
  const auto probes = screening_probes(clean, 2, 16);
  ASSERT_EQ(probes.size(), 2u * 16u);
  EXPECT_EQ(probes.scenes[0].pixel(0, 7, 7), 1.0);
  EXPECT_EQ(probes.scenes[0].pixel(2, 8, 8), 1.0);
  EXPECT_EQ(probes.scenes[0].annotations, clean.scenes[0].annotations);
}
