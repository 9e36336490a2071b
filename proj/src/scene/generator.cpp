#include "detguard/scene/generator.hpp"

#include <algorithm>
#include <cmath>

#include "detguard/autodiff/rng.hpp"
#include "detguard/errors.hpp"

namespace detguard {

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

bool inside_shape(int shape, double u, double v, double px_u, double px_v) {
  const double du = u - 0.5, dv = v - 0.5;
  switch (shape) {
    case 0:  // square
      return true;
    case 1:  // disk
      return du * du + dv * dv <= 0.25;
    case 2:  // upright isosceles triangle, half a pixel of slack on the slanted edges
      return std::abs(du) <= 0.5 * v + px_u + 0.5 * px_v;
    case 3:  // cross
      return std::abs(du) <= 0.2 || std::abs(dv) <= 0.2;
    default: {  // ring
      const double r2 = du * du + dv * dv;
      return r2 <= 0.25 && r2 >= 0.0625;
    }
  }
}

}  // namespace

std::vector<bool> shape_mask(int class_label, int w, int h) {
  std::vector<bool> mask(static_cast<std::size_t>(w) * h);
  const int shape = (class_label - 1) % 5;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mask[static_cast<std::size_t>(y) * w + x] =
          inside_shape(shape, (x + 0.5) / w, (y + 0.5) / h, 0.5 / w, 0.5 / h);
  return mask;
}

LabeledScene generate_scene(const SceneSpec& spec, std::uint64_t seed, int id) {
  Rng rng(sub_seed(seed, "scene:" + std::to_string(id)));
  const int c = spec.channels, hgt = spec.height, wid = spec.width;
  LabeledScene scene;
  scene.id = id;
  scene.image = ad::Tensor({c, hgt, wid});

  std::vector<double> base(static_cast<std::size_t>(c));
  for (auto& b : base) b = rng.uniform(0.15, 0.55);
  const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < hgt; ++y)
      for (int x = 0; x < wid; ++x) {
        const double v = base[static_cast<std::size_t>(ch)] + gx * (x / double(wid) - 0.5) +
                         gy * (y / double(hgt) - 0.5) + rng.uniform(-0.04, 0.04);
        scene.pixel(ch, y, x) = quantize(std::clamp(v, 0.0, 0.7));
      }

  const int n_objects = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int k = 0; k < n_objects; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int label = rng.uniform_int(1, spec.num_classes);
      const int w = rng.uniform_int(spec.min_size, spec.max_size);
      const double ratio = rng.uniform(0.8, 1.25);
      const int h = std::clamp(static_cast<int>(std::lround(w * ratio)), spec.min_size, spec.max_size);
      const int x0 = rng.uniform_int(0, wid - w);
      const int y0 = rng.uniform_int(0, hgt - h);
      const Box box{x0 + w / 2.0, y0 + h / 2.0, double(w), double(h)};
      bool clash = false;
      for (const auto& other : scene.annotations) {
        const double o = iou(box, other.box);
        if (o > spec.max_overlap_iou || (spec.max_overlap_iou == 0.0 && o > 0.0)) clash = true;
      }
      if (clash) continue;

      std::vector<double> color(static_cast<std::size_t>(c));
      for (int tries = 0; tries < 50; ++tries) {
        double contrast = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          color[static_cast<std::size_t>(ch)] = rng.uniform(0.05, 0.85);
          contrast = std::max(contrast, std::abs(color[static_cast<std::size_t>(ch)] - base[static_cast<std::size_t>(ch)]));
        }
        if (contrast >= 0.3) break;
      }
      const auto mask = shape_mask(label, w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (mask[static_cast<std::size_t>(y) * w + x])
            for (int ch = 0; ch < c; ++ch) scene.pixel(ch, y0 + y, x0 + x) = quantize(color[static_cast<std::size_t>(ch)]);
      scene.annotations.push_back({label, box});
      break;
    }
  }
  return scene;
}

Dataset generate_dataset(int n_scenes, const SceneSpec& spec, std::uint64_t seed, const std::string& split) {
  spec.validate();
  if (n_scenes < 1) throw ConfigError("scene count must be positive");
  Dataset d;
  d.split = split;
  d.spec = spec;
  d.seed = seed;
  d.scenes.reserve(static_cast<std::size_t>(n_scenes));
  for (int i = 0; i < n_scenes; ++i) d.scenes.push_back(generate_scene(spec, seed, i));
  return d;
}

}  // namespace detguard
