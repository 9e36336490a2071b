#include "detguard/scene/dataset_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "detguard/errors.hpp"
#include "json.hpp"

namespace detguard {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json parse_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), e.byte, e.what());
  }
}

std::string scene_file(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/scene_%05d.ppm", id);
  return buf;
}

json spec_to_json(const SceneSpec& s) {
  return {{"width", s.width},         {"height", s.height},     {"channels", s.channels},
          {"num_classes", s.num_classes}, {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_size", s.min_size},   {"max_size", s.max_size}, {"max_overlap_iou", s.max_overlap_iou}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  s.width = j.at("width");
  s.height = j.at("height");
  s.channels = j.at("channels");
  s.num_classes = j.at("num_classes");
  s.min_objects = j.at("min_objects");
  s.max_objects = j.at("max_objects");
  s.min_size = j.at("min_size");
  s.max_size = j.at("max_size");
  s.max_overlap_iou = j.at("max_overlap_iou");
  return s;
}

}  // namespace

void write_ppm(const ad::Tensor& image, const fs::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm", "expected [3,H,W], got " + ad::shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::string bytes(static_cast<std::size_t>(w) * h * 3, '\0');
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = image[(static_cast<std::size_t>(c) * h + y) * w + x];
        const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        bytes[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<char>(q);
      }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ad::Tensor read_ppm(const fs::path& path) {
  const std::string data = read_file(path);
  const std::string name = path.string();
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    const std::size_t start = pos;
    int v = 0;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
      v = v * 10 + (data[pos] - '0');
      if (v > 1 << 20) throw ParseError(name, start, "header value too large");
      ++pos;
    }
    if (pos == start) throw ParseError(name, start, "expected integer in PPM header");
    return v;
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '6') throw ParseError(name, 0, "missing P6 magic");
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const std::size_t maxval_at = pos;
  const int maxval = read_int();
  if (w <= 0 || h <= 0) throw ParseError(name, maxval_at, "non-positive image size");
  if (maxval != 255) throw ParseError(name, maxval_at, "only 8-bit PPM supported");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw ParseError(name, pos, "expected whitespace after header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (data.size() - pos < need)
    throw ParseError(name, data.size(), "truncated pixel data: need " + std::to_string(need) + " bytes");
  ad::Tensor image({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const auto q = static_cast<unsigned char>(data[pos + (static_cast<std::size_t>(y) * w + x) * 3 + c]);
        image[(static_cast<std::size_t>(c) * h + y) * w + x] = q / 255.0;
      }
  return image;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  json scenes = json::array(), images = json::array(), anns = json::array(), cats = json::array();
  int ann_id = 1;
  for (const auto& s : dataset.scenes) {
    const std::string file = scene_file(s.id);
    write_ppm(s.image, dir / file);
    scenes.push_back({{"id", s.id}, {"file", file}});
    images.push_back({{"id", s.id}, {"file_name", file}, {"width", s.width()}, {"height", s.height()}});
    for (const auto& a : s.annotations) {
      anns.push_back({{"id", ann_id++},
                      {"image_id", s.id},
                      {"category_id", a.class_label},
                      {"bbox", {a.box.cx, a.box.cy, a.box.w, a.box.h}},
                      {"area", a.box.area()}});
    }
  }
  for (int k = 1; k <= dataset.spec.num_classes; ++k) cats.push_back({{"id", k}, {"name", shape_name(k)}});
  json manifest = {{"format", "detguard-dataset"},
                   {"version", 1},
                   {"split", dataset.split},
                   {"num_classes", dataset.spec.num_classes},
                   {"image", {{"width", dataset.spec.width}, {"height", dataset.spec.height}, {"channels", dataset.spec.channels}}},
                   {"seed", dataset.seed},
                   {"scene_spec", spec_to_json(dataset.spec)},
                   {"annotations", "annotations.json"},
                   {"scenes", scenes}};
  json coco = {{"info", {{"bbox_format", "cx,cy,w,h"}}}, {"images", images}, {"annotations", anns}, {"categories", cats}};
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
  std::ofstream(dir / "annotations.json") << coco.dump(1) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json manifest = parse_json(manifest_path);
  Dataset d;
  try {
    d.split = manifest.at("split").get<std::string>();
    d.seed = manifest.at("seed").get<std::uint64_t>();
    d.spec = spec_from_json(manifest.at("scene_spec"));
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string(), 0, e.what());
  }
  const fs::path ann_path = dir / manifest.value("annotations", std::string("annotations.json"));
  const json coco = parse_json(ann_path);

  std::map<int, std::size_t> index;
  try {
    for (const auto& entry : manifest.at("scenes")) {
      const int id = entry.at("id");
      const std::string file = entry.at("file");
      const fs::path img = dir / file;
      if (!fs::exists(img)) throw Error("dataset references missing scene file " + img.string());
      LabeledScene s;
      s.id = id;
      s.image = read_ppm(img);
      index[id] = d.scenes.size();
      d.scenes.push_back(std::move(s));
    }
    for (const auto& a : coco.at("annotations")) {
      const int image_id = a.at("image_id");
      auto it = index.find(image_id);
      if (it == index.end())
        throw ParseError(ann_path.string(), 0, "annotation for unknown image " + std::to_string(image_id));
      const auto& bb = a.at("bbox");
      d.scenes[it->second].annotations.push_back(
          {a.at("category_id").get<int>(), Box{bb.at(0), bb.at(1), bb.at(2), bb.at(3)}});
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string(), 0, e.what());
  }
  return d;
}

}  // namespace detguard
