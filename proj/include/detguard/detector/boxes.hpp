#pragma once

#include <array>
#include <vector>

#include "detguard/scene/box.hpp"

namespace detguard {

// Greedy non-maximum suppression. Boxes are visited in descending score
// order (ties by index); a box is dropped when its IoU with an already kept
// box exceeds iou_thresh. Returns kept indices in visiting order.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_thresh);

// Faster R-CNN box parameterization relative to a reference box.
std::array<double, 4> encode_delta(const Box& reference, const Box& target);
Box decode_delta(const Box& reference, const std::array<double, 4>& delta);

Box clip_box(const Box& b, double width, double height);

// Anchors in the order the RPN emits them: index = a * cells + (y * fw + x).
std::vector<Box> make_anchors(int feature_size, int stride, const std::vector<double>& scales,
                              const std::vector<double>& ratios);

}  // namespace detguard
