#pragma once

#include <cstdint>
#include <vector>

#include "detguard/scene/scene.hpp"

namespace detguard {

// Classes 1..5 render as square, disk, triangle, cross and ring; further
// classes cycle through the same shapes. Pixel values are multiples of 1/255
// so 8-bit lossless storage round-trips exactly.
Dataset generate_dataset(int n_scenes, const SceneSpec& spec, std::uint64_t seed, const std::string& split = "train");

LabeledScene generate_scene(const SceneSpec& spec, std::uint64_t seed, int id);

// Pixel mask an object of `class_label` occupies inside its integer-aligned
// box: row-major h*w booleans.
std::vector<bool> shape_mask(int class_label, int w, int h);

}  // namespace detguard
