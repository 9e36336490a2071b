#pragma once

#include <array>

namespace detguard {

// Axis-aligned box in pixels, center-based: (cx, cy) is the center and
// (w, h) the extents. A box with w == h == 0 is the null box left behind by
// an object-disappearance poisoning.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
  }

  bool is_null() const noexcept { return w == 0.0 && h == 0.0; }
  double x1() const noexcept { return cx - w / 2.0; }
  double y1() const noexcept { return cy - h / 2.0; }
  double x2() const noexcept { return cx + w / 2.0; }
  double y2() const noexcept { return cy + h / 2.0; }
  double area() const noexcept { return w * h; }
  std::array<double, 4> corners() const noexcept { return {x1(), y1(), x2(), y2()}; }

  friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union. Symmetric, in [0, 1]; degenerate boxes give 0.
double iou(const Box& a, const Box& b);

}  // namespace detguard
