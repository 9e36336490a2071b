#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detguard/autodiff/tensor.hpp"
#include "detguard/scene/box.hpp"

namespace detguard {

struct Annotation {
  int class_label = 1;  // 1..K; 0 is reserved for background
  Box box;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

// Image plus its object annotations. Images are planar [C, H, W] with values
// in [0, 1].
struct LabeledScene {
  int id = 0;
  ad::Tensor image;
  std::vector<Annotation> annotations;

  int channels() const { return image.dim(0); }
  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
  double pixel(int c, int y, int x) const {
    return image[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  double& pixel(int c, int y, int x) {
    return image[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
};

// Parameters of the synthetic scene generator.
struct SceneSpec {
  int width = 64;
  int height = 64;
  int channels = 3;
  int num_classes = 5;
  int min_objects = 1;
  int max_objects = 4;
  int min_size = 18;
  int max_size = 40;
  // Two boxes whose IoU exceeds this are resampled.
  double max_overlap_iou = 0.0;

  // Throws ConfigError when the spec is unusable.
  void validate() const;
};

struct Dataset {
  std::string split = "train";
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<LabeledScene> scenes;

  std::size_t size() const noexcept { return scenes.size(); }
  bool empty() const noexcept { return scenes.empty(); }
};

// Every box is either fully inside the image or null, and every class label
// lies in 1..K.
bool annotations_valid(const LabeledScene& scene, int num_classes);

const char* shape_name(int class_label);

}  // namespace detguard
