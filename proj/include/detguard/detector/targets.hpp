#pragma once

#include <vector>

#include "detguard/autodiff/rng.hpp"
#include "detguard/detector/config.hpp"
#include "detguard/scene/scene.hpp"

namespace detguard {

// Null boxes are never matchable, so anchors and RoIs over a poisoned
// victim fall into the background pool like any other unmatched region.
std::vector<Box> matchable_boxes(const std::vector<Annotation>& annotations);

struct AnchorTargets {
  std::vector<int> labels;       // 1 positive, 0 negative, -1 ignored
  std::vector<int> matched;      // index into matchable annotations, -1 if none
  std::vector<double> best_iou;  // max IoU with any matchable box
};

// IoU >= positive_iou -> positive, < negative_iou -> negative; each matchable
// box also claims its best anchor.
AnchorTargets assign_anchor_targets(const std::vector<Box>& anchors, const std::vector<Annotation>& annotations,
                                    double positive_iou, double negative_iou);

// Keeps up to batch labels with at most fraction positives; others become -1.
void subsample_labels(std::vector<int>& labels, int batch, double positive_fraction, Rng& rng);

struct RoiTargets {
  std::vector<int> labels;  // class label, 0 for background
  std::vector<int> matched;  // annotation index, -1 for background
};

RoiTargets assign_roi_targets(const std::vector<Box>& rois, const std::vector<Annotation>& annotations,
                              double foreground_iou);

}  // namespace detguard
