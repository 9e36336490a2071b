#include "detguard/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "detguard/errors.hpp"

namespace detguard {

namespace {

using nlohmann::json;

// Reads optional keys of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(path_ + "." + key + ": unknown key");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }
  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read(const json& j, const std::string& path, SceneSpec& s) {
  Section r(j, path);
  r.get("width", s.width);
  r.get("height", s.height);
  r.get("channels", s.channels);
  r.get("num_classes", s.num_classes);
  r.get("min_objects", s.min_objects);
  r.get("max_objects", s.max_objects);
  r.get("min_size", s.min_size);
  r.get("max_size", s.max_size);
  r.get("max_overlap_iou", s.max_overlap_iou);
}

void read(const json& j, const std::string& path, DetectorConfig& c) {
  Section r(j, path);
  r.get("image_size", c.image_size);
  r.get("channels", c.channels);
  r.get("num_classes", c.num_classes);
  r.get("backbone_channels", c.backbone_channels);
  r.get("rpn_channels", c.rpn_channels);
  r.get("anchor_scales", c.anchor_scales);
  r.get("anchor_ratios", c.anchor_ratios);
  r.get("pre_nms_top_n", c.pre_nms_top_n);
  r.get("train_post_nms_top_n", c.train_post_nms_top_n);
  r.get("proposal_top_k", c.proposal_top_k);
  r.get("rpn_nms_iou", c.rpn_nms_iou);
  r.get("min_proposal_size", c.min_proposal_size);
  r.get("roi_pool_size", c.roi_pool_size);
  r.get("roi_hidden", c.roi_hidden);
  r.get("rpn_positive_iou", c.rpn_positive_iou);
  r.get("rpn_negative_iou", c.rpn_negative_iou);
  r.get("rpn_batch", c.rpn_batch);
  r.get("rpn_positive_fraction", c.rpn_positive_fraction);
  r.get("roi_foreground_iou", c.roi_foreground_iou);
  r.get("roi_batch", c.roi_batch);
  r.get("roi_foreground_fraction", c.roi_foreground_fraction);
  r.get("roi_delta_std", c.roi_delta_std);
  r.get("lambda", c.lambda);
  r.get("max_detections", c.max_detections);
}

void read(const json& j, const std::string& path, TrainSchedule& t) {
  Section r(j, path);
  r.get("epochs", t.epochs);
  r.get("lr", t.lr);
  r.get("momentum", t.momentum);
  r.get("batch", t.batch);
  r.get("lr_drop_epochs", t.lr_drop_epochs);
  r.get("grad_clip", t.grad_clip);
}

void read(const json& j, const std::string& path, EvalConfig& e) {
  Section r(j, path);
  r.get("iou_thresholds", e.iou_thresholds);
  r.get("small_max", e.small_max);
  r.get("medium_max", e.medium_max);
  r.get("tau", e.tau);
  r.get("score_threshold", e.score_threshold);
  r.get("detection_score_threshold", e.detection_score_threshold);
  r.get("nms_iou", e.nms_iou);
}

std::vector<Augmentation> read_augmentations(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected a list of augmentation names");
  std::vector<Augmentation> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError(path + ": expected strings");
    out.push_back(parse_augmentation(v.get<std::string>()));
  }
  return out;
}

json augmentation_names(const std::vector<Augmentation>& augs) {
  json a = json::array();
  for (auto m : augs) a.push_back(augmentation_name(m));
  return a;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (removal_seeds < 0 || removal_seeds > static_cast<int>(seeds.size()))
    throw ConfigError("removal_seeds must lie in [0, number of seeds]");
  data.scene.validate();
  if (data.n_train < 1 || data.n_val < 1 || data.n_test < 1) throw ConfigError("split sizes must be positive");
  make_white_patch_trigger(attack.relative_size, attack.alpha);
  if (!(attack.rate > 0.0 && attack.rate < 1.0)) throw ConfigError("poison rate must lie in (0, 1)");
  if (detector.image_size != data.scene.width || detector.image_size != data.scene.height ||
      detector.channels != data.scene.channels || detector.num_classes != data.scene.num_classes)
    throw ConfigError("detector and scene spec disagree on image size, channels or classes");
  detector.validate();
  if (train.epochs < 1 || !(train.lr > 0.0) || train.batch < 1) throw ConfigError("invalid training schedule");
  if (sentinel.epsilon && sentinel.theta) InconsistencyConfig{*sentinel.epsilon, *sentinel.theta}.validate();
  if (sentinel.probes < 1) throw ConfigError("sentinel.probes must be positive");
  if (sentinel.heatmap_stride < 1 || data.scene.width % sentinel.heatmap_stride ||
      data.scene.height % sentinel.heatmap_stride)
    throw ConfigError("sentinel.heatmap_stride must divide the image size");
  if (!(purge.clean_fraction > 0.0 && purge.clean_fraction <= 1.0)) throw ConfigError("purge.clean_fraction must lie in (0, 1]");
  if (!(purge.lr_scale > 0.0)) throw ConfigError("purge.lr_scale must be > 0");
  removal(0, purge.augmentations).validate();
  eval.validate();
}

RemovalConfig ExperimentConfig::removal(std::uint64_t seed, std::vector<Augmentation> augmentations) const {
  RemovalConfig r;
  r.epochs = purge.epochs;
  r.lr = purge.lr_scale * train.lr;
  r.momentum = train.momentum;
  r.batch = train.batch;
  r.augmentations = std::move(augmentations);
  r.augment = purge.augment;
  r.seed = seed;
  return r;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  Section r(j, "config");
  r.get("seeds", c.seeds);
  r.get("removal_seeds", c.removal_seeds);
  if (r.has("data")) {
    Section d(r.at("data"), r.path("data"));
    if (d.has("scene")) read(d.at("scene"), d.path("scene"), c.data.scene);
    d.get("n_train", c.data.n_train);
    d.get("n_val", c.data.n_val);
    d.get("n_test", c.data.n_test);
    d.get("seed", c.data.seed);
  }
  if (r.has("attack")) {
    Section a(r.at("attack"), r.path("attack"));
    a.get("rate", c.attack.rate);
    a.get("relative_size", c.attack.relative_size);
    a.get("alpha", c.attack.alpha);
    a.get("target_class", c.attack.target_class);
    a.get("min_victim_size", c.attack.min_victim_size);
  }
  if (r.has("detector")) read(r.at("detector"), r.path("detector"), c.detector);
  if (r.has("train")) read(r.at("train"), r.path("train"), c.train);
  if (r.has("sentinel")) {
    Section s(r.at("sentinel"), r.path("sentinel"));
    s.get("epsilon", c.sentinel.epsilon);
    s.get("survive_fraction", c.sentinel.survive_fraction);
    s.get("theta", c.sentinel.theta);
    s.get("probes", c.sentinel.probes);
    s.get("heatmap_stride", c.sentinel.heatmap_stride);
  }
  if (r.has("purge")) {
    Section p(r.at("purge"), r.path("purge"));
    p.get("epochs", c.purge.epochs);
    p.get("lr_scale", c.purge.lr_scale);
    p.get("clean_fraction", c.purge.clean_fraction);
    if (p.has("augmentations")) c.purge.augmentations = read_augmentations(p.at("augmentations"), p.path("augmentations"));
    if (p.has("augment")) {
      Section a(p.at("augment"), p.path("augment"));
      a.get("brightness", c.purge.augment.brightness);
      a.get("contrast", c.purge.augment.contrast);
      a.get("saturation", c.purge.augment.saturation);
      a.get("flip_probability", c.purge.augment.flip_probability);
    }
    p.get("ablation", c.purge.ablation);
  }
  if (r.has("eval")) read(r.at("eval"), r.path("eval"), c.eval);
  c.validate();
  return c;
}

json to_json(const SceneSpec& s) {
  return {{"width", s.width},         {"height", s.height},          {"channels", s.channels},
          {"num_classes", s.num_classes}, {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_size", s.min_size},   {"max_size", s.max_size},      {"max_overlap_iou", s.max_overlap_iou}};
}

json to_json(const DetectorConfig& c) {
  return {{"image_size", c.image_size},
          {"channels", c.channels},
          {"num_classes", c.num_classes},
          {"backbone_channels", c.backbone_channels},
          {"rpn_channels", c.rpn_channels},
          {"anchor_scales", c.anchor_scales},
          {"anchor_ratios", c.anchor_ratios},
          {"pre_nms_top_n", c.pre_nms_top_n},
          {"train_post_nms_top_n", c.train_post_nms_top_n},
          {"proposal_top_k", c.proposal_top_k},
          {"rpn_nms_iou", c.rpn_nms_iou},
          {"min_proposal_size", c.min_proposal_size},
          {"roi_pool_size", c.roi_pool_size},
          {"roi_hidden", c.roi_hidden},
          {"rpn_positive_iou", c.rpn_positive_iou},
          {"rpn_negative_iou", c.rpn_negative_iou},
          {"rpn_batch", c.rpn_batch},
          {"rpn_positive_fraction", c.rpn_positive_fraction},
          {"roi_foreground_iou", c.roi_foreground_iou},
          {"roi_batch", c.roi_batch},
          {"roi_foreground_fraction", c.roi_foreground_fraction},
          {"roi_delta_std", c.roi_delta_std},
          {"lambda", c.lambda},
          {"max_detections", c.max_detections}};
}

json to_json(const TrainSchedule& t) {
  return {{"epochs", t.epochs}, {"lr", t.lr},         {"momentum", t.momentum},
          {"batch", t.batch},   {"lr_drop_epochs", t.lr_drop_epochs}, {"grad_clip", t.grad_clip}};
}

json to_json(const EvalConfig& e) {
  return {{"iou_thresholds", e.iou_thresholds}, {"small_max", e.small_max},
          {"medium_max", e.medium_max},         {"tau", e.tau},
          {"score_threshold", e.score_threshold}, {"detection_score_threshold", e.detection_score_threshold},
          {"nms_iou", e.nms_iou}};
}

json to_json(const MetricSet& m) {
  json j;
  const auto v = m.values();
  for (std::size_t i = 0; i < v.size(); ++i) j[MetricSet::kNames[i]] = v[i];
  return j;
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seeds"] = c.seeds;
  j["removal_seeds"] = c.removal_seeds;
  j["data"] = {{"scene", to_json(c.data.scene)},
               {"n_train", c.data.n_train},
               {"n_val", c.data.n_val},
               {"n_test", c.data.n_test},
               {"seed", c.data.seed}};
  j["attack"] = {{"rate", c.attack.rate},
                 {"relative_size", c.attack.relative_size},
                 {"alpha", c.attack.alpha},
                 {"target_class", c.attack.target_class ? json(*c.attack.target_class) : json(nullptr)},
                 {"min_victim_size", c.attack.min_victim_size}};
  j["detector"] = to_json(c.detector);
  j["train"] = to_json(c.train);
  j["sentinel"] = {{"epsilon", c.sentinel.epsilon ? json(*c.sentinel.epsilon) : json(nullptr)},
                   {"survive_fraction", c.sentinel.survive_fraction},
                   {"theta", c.sentinel.theta ? json(*c.sentinel.theta) : json(nullptr)},
                   {"probes", c.sentinel.probes},
                   {"heatmap_stride", c.sentinel.heatmap_stride}};
  j["purge"] = {{"epochs", c.purge.epochs},
                {"lr_scale", c.purge.lr_scale},
                {"clean_fraction", c.purge.clean_fraction},
                {"augmentations", augmentation_names(c.purge.augmentations)},
                {"augment",
                 {{"brightness", c.purge.augment.brightness},
                  {"contrast", c.purge.augment.contrast},
                  {"saturation", c.purge.augment.saturation},
                  {"flip_probability", c.purge.augment.flip_probability}}},
                {"ablation", c.purge.ablation}};
  j["eval"] = to_json(c.eval);
  return j;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return experiment_config_from_json(json::parse(ss.str()));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), e.byte, e.what());
  }
}

}  // namespace detguard
