#include "detguard/harness/metrics.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include "detguard/errors.hpp"

namespace detguard {

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw ConfigError("need at least one IoU threshold");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    if (!(iou_thresholds[i] > 0.0 && iou_thresholds[i] < 1.0)) throw ConfigError("IoU thresholds must lie in (0, 1)");
    if (i && iou_thresholds[i] <= iou_thresholds[i - 1]) throw ConfigError("IoU thresholds must be increasing");
  }
  if (!(small_max > 0.0 && medium_max > small_max)) throw ConfigError("area buckets must satisfy 0 < small < medium");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
}

ApResult average_precision_in_range(const std::vector<ScoredBox>& detections, const std::vector<GtBox>& ground_truth,
                                    double iou_thresh, double area_lo, double area_hi) {
  std::map<int, std::vector<std::size_t>> gt_by_image;
  std::vector<bool> gt_ignore(ground_truth.size());
  std::size_t npos = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    const auto& g = ground_truth[i];
    const double a = g.box.area();
    gt_ignore[i] = g.ignore || a < area_lo || a >= area_hi;
    if (!gt_ignore[i]) ++npos;
    gt_by_image[g.image].push_back(i);
  }
  // Non-ignored GT first so a detection prefers a real match.
  for (auto& [_, idx] : gt_by_image)
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return !gt_ignore[a] && gt_ignore[b]; });

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });

  std::vector<bool> gt_used(ground_truth.size(), false);
  std::vector<int> outcome;  // 1 TP, 0 FP
  outcome.reserve(order.size());
  for (std::size_t di : order) {
    const auto& d = detections[di];
    double best = std::min(iou_thresh, 1.0 - 1e-10);
    long match = -1;
    auto it = gt_by_image.find(d.image);
    if (it != gt_by_image.end()) {
      for (std::size_t gi : it->second) {
        if (gt_used[gi]) continue;
        // Once a real match exists, ignored GT cannot displace it.
        if (match >= 0 && !gt_ignore[static_cast<std::size_t>(match)] && gt_ignore[gi]) break;
        const double o = iou(d.box, ground_truth[gi].box);
        if (o < best) continue;
        best = o;
        match = static_cast<long>(gi);
      }
    }
    if (match >= 0) {
      gt_used[static_cast<std::size_t>(match)] = true;
      if (!gt_ignore[static_cast<std::size_t>(match)]) outcome.push_back(1);
      continue;
    }
    const double a = d.box.area();
    if (a < area_lo || a >= area_hi) continue;
    outcome.push_back(0);
  }

  if (npos == 0) return {outcome.empty() ? 1.0 : 0.0, false};

  std::vector<double> recall(outcome.size()), precision(outcome.size());
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < outcome.size(); ++i) {
    (outcome[i] ? tp : fp) += 1.0;
    recall[i] = tp / static_cast<double>(npos);
    precision[i] = tp / (tp + fp);
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), level - 1e-12);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return {sum / 101.0, true};
}

ApResult average_precision(const std::vector<ScoredBox>& detections, const std::vector<GtBox>& ground_truth,
                           double iou_thresh) {
  return average_precision_in_range(detections, ground_truth, iou_thresh, 0.0, std::numeric_limits<double>::infinity());
}

DetectionsPerImage collect_detections(TwoStageDetector& model, const Dataset& dataset, const EvalConfig& config) {
  DetectionsPerImage out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.scenes) out.push_back(model.detect(s.image, config.detection_score_threshold, config.nms_iou));
  return out;
}

MetricSet evaluate_detections(const DetectionsPerImage& detections, const Dataset& dataset, const EvalConfig& config) {
  config.validate();
  if (detections.size() != dataset.size()) throw ConfigError("detections and dataset differ in length");
  const int k = dataset.spec.num_classes;
  std::vector<std::vector<ScoredBox>> dets(static_cast<std::size_t>(k + 1));
  std::vector<std::vector<GtBox>> gts(static_cast<std::size_t>(k + 1));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (const auto& a : dataset.scenes[i].annotations)
      if (!a.box.is_null() && a.class_label >= 1 && a.class_label <= k)
        gts[static_cast<std::size_t>(a.class_label)].push_back({static_cast<int>(i), a.box, false});
    for (const auto& d : detections[i])
      if (d.class_label >= 1 && d.class_label <= k)
        dets[static_cast<std::size_t>(d.class_label)].push_back({static_cast<int>(i), d.box, d.score});
  }
  const double inf = std::numeric_limits<double>::infinity();
  // Mean over classes (and thresholds) of counted results; -1 when none.
  auto mean_ap = [&](const std::vector<double>& thresholds, double lo, double hi) {
    double sum = 0.0;
    int n = 0;
    for (double t : thresholds)
      for (int c = 1; c <= k; ++c) {
        const ApResult r = average_precision_in_range(dets[static_cast<std::size_t>(c)], gts[static_cast<std::size_t>(c)], t, lo, hi);
        if (!r.counted) continue;
        sum += r.ap;
        ++n;
      }
    return n ? sum / n : -1.0;
  };
  MetricSet m;
  m.ap = mean_ap(config.iou_thresholds, 0.0, inf);
  m.ap50 = mean_ap({0.5}, 0.0, inf);
  m.ap75 = mean_ap({0.75}, 0.0, inf);
  m.ap_s = mean_ap(config.iou_thresholds, 0.0, config.small_max);
  m.ap_m = mean_ap(config.iou_thresholds, config.small_max, config.medium_max);
  m.ap_l = mean_ap(config.iou_thresholds, config.medium_max, inf);
  return m;
}

MetricSet metric_suite(TwoStageDetector& model, const Dataset& dataset, const EvalConfig& config) {
  return evaluate_detections(collect_detections(model, dataset, config), dataset, config);
}

namespace {

bool victim_found(const std::vector<Detection>& dets, const PoisonRecord& v, const EvalConfig& config) {
  for (const auto& d : dets)
    if (d.class_label == v.class_label && d.score >= config.score_threshold && iou(d.box, v.original_box) >= config.tau)
      return true;
  return false;
}

}  // namespace

double attack_success_rate(const DetectionsPerImage& detections, const std::vector<PoisonRecord>& victims,
                           const EvalConfig& config) {
  if (victims.empty()) return 0.0;
  std::size_t missed = 0;
  for (const auto& v : victims)
    if (!victim_found(detections.at(static_cast<std::size_t>(v.scene_index)), v, config)) ++missed;
  return static_cast<double>(missed) / static_cast<double>(victims.size());
}

double attack_success_rate(TwoStageDetector& model, const TriggeredSet& triggered, const EvalConfig& config) {
  return attack_success_rate(collect_detections(model, triggered.scenes, config), triggered.victims, config);
}

double victim_recall(const DetectionsPerImage& detections, const std::vector<PoisonRecord>& victims,
                     const EvalConfig& config) {
  return 1.0 - attack_success_rate(detections, victims, config);
}

}  // namespace detguard
