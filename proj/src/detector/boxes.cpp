#include "detguard/detector/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace detguard {

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_thresh) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  std::vector<int> keep;
  std::vector<bool> suppressed(boxes.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int bi = order[i];
    if (suppressed[static_cast<std::size_t>(bi)]) continue;
    keep.push_back(bi);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int bj = order[j];
      if (!suppressed[static_cast<std::size_t>(bj)] &&
          iou(boxes[static_cast<std::size_t>(bi)], boxes[static_cast<std::size_t>(bj)]) > iou_thresh)
        suppressed[static_cast<std::size_t>(bj)] = true;
    }
  }
  return keep;
}

std::array<double, 4> encode_delta(const Box& r, const Box& t) {
  return {(t.cx - r.cx) / r.w, (t.cy - r.cy) / r.h, std::log(t.w / r.w), std::log(t.h / r.h)};
}

Box decode_delta(const Box& r, const std::array<double, 4>& d) {
  static const double kMaxLog = std::log(1000.0 / 16.0);
  return {r.cx + d[0] * r.w, r.cy + d[1] * r.h, r.w * std::exp(std::min(d[2], kMaxLog)),
          r.h * std::exp(std::min(d[3], kMaxLog))};
}

Box clip_box(const Box& b, double width, double height) {
  const double x1 = std::clamp(b.x1(), 0.0, width), x2 = std::clamp(b.x2(), 0.0, width);
  const double y1 = std::clamp(b.y1(), 0.0, height), y2 = std::clamp(b.y2(), 0.0, height);
  return Box::from_corners(x1, y1, x2, y2);
}

std::vector<Box> make_anchors(int feature_size, int stride, const std::vector<double>& scales,
                              const std::vector<double>& ratios) {
  std::vector<Box> anchors;
  anchors.reserve(scales.size() * ratios.size() * static_cast<std::size_t>(feature_size * feature_size));
  for (double s : scales)
    for (double r : ratios) {
      const double w = s / std::sqrt(r), h = s * std::sqrt(r);
      for (int y = 0; y < feature_size; ++y)
        for (int x = 0; x < feature_size; ++x) anchors.push_back({(x + 0.5) * stride, (y + 0.5) * stride, w, h});
    }
  return anchors;
}

}  // namespace detguard
