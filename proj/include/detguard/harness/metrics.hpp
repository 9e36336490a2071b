#pragma once

#include <array>
#include <string>
#include <vector>

#include "detguard/detector/model.hpp"
#include "detguard/poison/poison.hpp"
#include "detguard/scene/scene.hpp"

namespace detguard {

struct EvalConfig {
  std::vector<double> iou_thresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  // Area buckets (px^2): small < small_max, medium < medium_max, large otherwise.
  double small_max = 16.0 * 16.0;
  double medium_max = 32.0 * 32.0;
  double tau = 0.5;                       // match IoU for attack success / victim recall
  double score_threshold = 0.5;           // a victim counts as detected at or above this score
  double detection_score_threshold = 0.05;  // detections kept for AP
  double nms_iou = 0.5;

  void validate() const;
};

struct ScoredBox {
  int image = 0;
  Box box;
  double score = 0.0;
};

struct GtBox {
  int image = 0;
  Box box;
  bool ignore = false;
};

struct ApResult {
  double ap = 0.0;
  // False when there is no (non-ignored) ground truth; such results are
  // excluded from averages.
  bool counted = true;
};

// Single-class COCO-style AP: greedy score-ordered matching at iou_thresh
// (each GT matched at most once, best IoU first), 101-point interpolation.
// Detections matched to ignored GT are dropped. With no GT the result is 1
// if there are no detections and 0 otherwise, and is not counted.
ApResult average_precision(const std::vector<ScoredBox>& detections, const std::vector<GtBox>& ground_truth,
                           double iou_thresh);

// Same, with GT outside [area_lo, area_hi) ignored and unmatched detections
// outside that range dropped.
ApResult average_precision_in_range(const std::vector<ScoredBox>& detections, const std::vector<GtBox>& ground_truth,
                                    double iou_thresh, double area_lo, double area_hi);

struct MetricSet {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap_s = -1.0;  // -1 when the bucket has no ground truth
  double ap_m = -1.0;
  double ap_l = -1.0;

  static constexpr std::array<const char*, 6> kNames{"AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"};
  std::array<double, 6> values() const { return {ap, ap50, ap75, ap_s, ap_m, ap_l}; }
};

using DetectionsPerImage = std::vector<std::vector<Detection>>;

DetectionsPerImage collect_detections(TwoStageDetector& model, const Dataset& dataset, const EvalConfig& config);
MetricSet evaluate_detections(const DetectionsPerImage& detections, const Dataset& dataset, const EvalConfig& config);
MetricSet metric_suite(TwoStageDetector& model, const Dataset& dataset, const EvalConfig& config);

// Fraction of victims with no detection of their class at IoU >= tau and
// score >= config.score_threshold.
double attack_success_rate(const DetectionsPerImage& detections, const std::vector<PoisonRecord>& victims,
                           const EvalConfig& config);
double attack_success_rate(TwoStageDetector& model, const TriggeredSet& triggered, const EvalConfig& config);

// 1 - ASR: share of victims still detected.
double victim_recall(const DetectionsPerImage& detections, const std::vector<PoisonRecord>& victims,
                     const EvalConfig& config);

}  // namespace detguard
