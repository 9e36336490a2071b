#include "detguard/detector/targets.hpp"

#include <algorithm>

namespace detguard {

std::vector<Box> matchable_boxes(const std::vector<Annotation>& annotations) {
  std::vector<Box> out;
  for (const auto& a : annotations)
    if (!a.box.is_null()) out.push_back(a.box);
  return out;
}

namespace {

std::vector<int> matchable_indices(const std::vector<Annotation>& annotations) {
  std::vector<int> out;
  for (std::size_t i = 0; i < annotations.size(); ++i)
    if (!annotations[i].box.is_null()) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

AnchorTargets assign_anchor_targets(const std::vector<Box>& anchors, const std::vector<Annotation>& annotations,
                                    double positive_iou, double negative_iou) {
  const auto gt = matchable_indices(annotations);
  AnchorTargets t;
  t.labels.assign(anchors.size(), 0);
  t.matched.assign(anchors.size(), -1);
  t.best_iou.assign(anchors.size(), 0.0);
  std::vector<double> gt_best(gt.size(), 0.0);
  std::vector<std::vector<double>> overlaps(anchors.size(), std::vector<double>(gt.size(), 0.0));
  for (std::size_t i = 0; i < anchors.size(); ++i)
    for (std::size_t k = 0; k < gt.size(); ++k) {
      const double o = iou(anchors[i], annotations[static_cast<std::size_t>(gt[k])].box);
      overlaps[i][k] = o;
      if (o > t.best_iou[i]) {
        t.best_iou[i] = o;
        t.matched[i] = gt[k];
      }
      gt_best[k] = std::max(gt_best[k], o);
    }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (t.best_iou[i] >= positive_iou)
      t.labels[i] = 1;
    else if (t.best_iou[i] >= negative_iou)
      t.labels[i] = -1;
  }
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (gt_best[k] <= 0.0) continue;
    for (std::size_t i = 0; i < anchors.size(); ++i)
      if (overlaps[i][k] == gt_best[k]) {
        t.labels[i] = 1;
        t.matched[i] = gt[k];
      }
  }
  return t;
}

void subsample_labels(std::vector<int>& labels, int batch, double positive_fraction, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) pos.push_back(i);
    if (labels[i] == 0) neg.push_back(i);
  }
  const auto max_pos = static_cast<std::size_t>(batch * positive_fraction);
  if (pos.size() > max_pos) {
    rng.shuffle(pos);
    for (std::size_t j = max_pos; j < pos.size(); ++j) labels[pos[j]] = -1;
    pos.resize(max_pos);
  }
  const std::size_t max_neg = static_cast<std::size_t>(batch) - pos.size();
  if (neg.size() > max_neg) {
    rng.shuffle(neg);
    for (std::size_t j = max_neg; j < neg.size(); ++j) labels[neg[j]] = -1;
  }
}

RoiTargets assign_roi_targets(const std::vector<Box>& rois, const std::vector<Annotation>& annotations,
                              double foreground_iou) {
  RoiTargets t;
  t.labels.assign(rois.size(), 0);
  t.matched.assign(rois.size(), -1);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t k = 0; k < annotations.size(); ++k) {
      if (annotations[k].box.is_null()) continue;
      const double o = iou(rois[i], annotations[k].box);
      if (o > best) {
        best = o;
        arg = static_cast<int>(k);
      }
    }
    if (arg >= 0 && best >= foreground_iou) {
      t.labels[i] = annotations[static_cast<std::size_t>(arg)].class_label;
      t.matched[i] = arg;
    }
  }
  return t;
}

}  // namespace detguard
