#include "detguard/scene/scene.hpp"

#include <algorithm>

#include "detguard/errors.hpp"

namespace detguard {

double iou(const Box& a, const Box& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0) return 0.0;
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

void SceneSpec::validate() const {
  if (width <= 0 || height <= 0 || channels <= 0) throw ConfigError("image dimensions must be positive");
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (min_objects < 1 || max_objects < min_objects)
    throw ConfigError("objects-per-scene range must satisfy 1 <= min <= max");
  if (min_size < 12) throw ConfigError("minimum box size must be >= 12 px so a 10% trigger covers a pixel");
  if (max_size < min_size || max_size > std::min(width, height))
    throw ConfigError("box size range must satisfy min <= max <= image size");
  if (max_overlap_iou < 0.0 || max_overlap_iou >= 1.0) throw ConfigError("max_overlap_iou must lie in [0, 1)");
}

bool annotations_valid(const LabeledScene& scene, int num_classes) {
  for (const auto& a : scene.annotations) {
    if (a.class_label < 1 || a.class_label > num_classes) return false;
    if (a.box.is_null()) continue;
    if (a.box.w <= 0.0 || a.box.h <= 0.0) return false;
    if (a.box.x1() < 0.0 || a.box.y1() < 0.0 || a.box.x2() > scene.width() || a.box.y2() > scene.height())
      return false;
  }
  return true;
}

const char* shape_name(int class_label) {
  static constexpr const char* kNames[] = {"square", "disk", "triangle", "cross", "ring"};
  if (class_label < 1) return "background";
  return kNames[(class_label - 1) % 5];
}

}  // namespace detguard
