#pragma once

#include <filesystem>

#include "detguard/scene/scene.hpp"

namespace detguard {

// Directory layout: manifest.json, annotations.json (COCO-like, center-based
// boxes) and images/scene_NNNNN.ppm (binary 8-bit PPM, lossless for
// generated pixels).
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

void write_ppm(const ad::Tensor& image, const std::filesystem::path& path);
ad::Tensor read_ppm(const std::filesystem::path& path);

}  // namespace detguard
