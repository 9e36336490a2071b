#include "detguard/purge/purge.hpp"

#include <algorithm>
#include <cmath>

#include "detguard/errors.hpp"

namespace detguard {

Augmentation parse_augmentation(const std::string& name) {
  if (name == "pd" || name == "photodistortion") return Augmentation::Photodistortion;
  if (name == "rd" || name == "flip" || name == "random-flip") return Augmentation::RandomFlip;
  throw ConfigError("unknown augmentation '" + name + "' (expected pd or rd)");
}

const char* augmentation_name(Augmentation a) {
  return a == Augmentation::Photodistortion ? "photodistortion" : "random-flip";
}

void photodistort(LabeledScene& scene, Rng& rng, const AugmentConfig& config) {
  const double shift = rng.uniform(-config.brightness, config.brightness);
  const double contrast = 1.0 + rng.uniform(-config.contrast, config.contrast);
  const double saturation = 1.0 + rng.uniform(-config.saturation, config.saturation);
  if (shift == 0.0 && contrast == 1.0 && saturation == 1.0) return;
  auto& px = scene.image.storage();
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= static_cast<double>(px.size());
  const int c = scene.channels(), h = scene.height(), w = scene.width();
  std::vector<double> v(static_cast<std::size_t>(c));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double gray = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        auto& u = v[static_cast<std::size_t>(ch)];
        u = (scene.pixel(ch, y, x) - mean) * contrast + mean + shift;
        gray += u;
      }
      gray /= c;
      for (int ch = 0; ch < c; ++ch)
        scene.pixel(ch, y, x) = std::clamp(gray + (v[static_cast<std::size_t>(ch)] - gray) * saturation, 0.0, 1.0);
    }
}

void flip_horizontal(LabeledScene& scene) {
  const int c = scene.channels(), h = scene.height(), w = scene.width();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x) std::swap(scene.pixel(ch, y, x), scene.pixel(ch, y, w - 1 - x));
  for (auto& a : scene.annotations) a.box.cx = w - a.box.cx;
}

void augment(std::vector<LabeledScene>& batch, const std::vector<Augmentation>& methods, Rng& rng,
             const AugmentConfig& config) {
  for (auto& scene : batch)
    for (Augmentation m : methods) {
      if (m == Augmentation::Photodistortion) photodistort(scene, rng, config);
      else if (rng.bernoulli(config.flip_probability)) flip_horizontal(scene);
    }
}

std::string attribution_winner(const std::map<std::string, double>& score) {
  std::string best;
  double best_score = -1.0;
  for (const auto& m : kCandidateModules) {  // already in lexicographic order
    const auto it = score.find(m);
    const double v = it == score.end() ? 0.0 : it->second;
    if (v > best_score) {
      best = m;
      best_score = v;
    }
  }
  return best;
}

ModuleAttribution attribute_modules(const TwoStageDetector& model, const std::vector<std::vector<ProposalRecord>>& images,
                                    double epsilon, double drift_iou) {
  ModuleAttribution out;
  std::map<std::string, double> sum;
  for (const auto& m : kCandidateModules) {
    sum[m] = 0.0;
    out.count[m] = 0;
  }
  for (const auto& records : images)
    for (const auto& rec : records) {
      const auto [r, p] = comparable_score(rec);
      const double s = std::abs(r - p);
      if (!(s > epsilon)) continue;
      std::string module = r > p ? "roi_cls_head" : "rpn_head";
      if (r > 0.5 && p > 0.5) {
        const auto& cls = rec.roi_class_scores;
        const int c = static_cast<int>(std::max_element(cls.begin() + 1, cls.end()) - cls.begin());
        if (iou(model.refined_box(rec, c), rec.proposal) < drift_iou) module = "roi_reg_head";
      }
      sum[module] += s;
      ++out.count[module];
    }
  for (const auto& m : kCandidateModules) out.score[m] = out.count[m] ? sum[m] / out.count[m] : 0.0;
  out.winner = attribution_winner(out.score);
  return out;
}

ModuleAttribution identify_affected_module(TwoStageDetector& model, const Dataset& probes,
                                           const InconsistencyReport& report) {
  if (!report.verdict) throw ConfigError("verdict is normal; there is no backdoor to remove");
  std::vector<std::vector<ProposalRecord>> images;
  images.reserve(probes.size());
  for (const auto& s : probes.scenes) images.push_back(model.analyze(s.image));
  return attribute_modules(model, images, report.config.epsilon);
}

void locally_initialize(TwoStageDetector& model, const std::string& module, std::uint64_t seed) {
  model.params().reinitialize(module, seed);
}

void RemovalConfig::validate() const {
  if (epochs < 0) throw ConfigError("fine-tune epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("fine-tune lr must be > 0");
  if (batch < 1) throw ConfigError("fine-tune batch must be >= 1");
}

std::map<std::string, std::uint64_t> module_checksums(const TwoStageDetector& model) {
  std::map<std::string, std::uint64_t> out;
  for (const char* m : TwoStageDetector::kModules) out[m] = model.params().checksum(m);
  return out;
}

namespace {

RemovalResult finetune(TwoStageDetector& model, const std::vector<LabeledScene>& clean, const RemovalConfig& config,
                       const EpochHook& on_epoch, RemovalResult result) {
  config.validate();
  if (clean.empty()) throw ConfigError("clean fine-tune set is empty");
  if (on_epoch) on_epoch(0, model);
  TrainOptions opt;
  opt.schedule.epochs = config.epochs;
  opt.schedule.lr = config.lr;
  opt.schedule.momentum = config.momentum;
  opt.schedule.batch = config.batch;
  opt.schedule.lr_drop_epochs = {};
  opt.seed = sub_seed(config.seed, "finetune");
  if (!config.augmentations.empty()) {
    const auto methods = config.augmentations;
    const auto aug = config.augment;
    opt.transform = [methods, aug](std::vector<LabeledScene>& batch, Rng& rng) { augment(batch, methods, rng, aug); };
  }
  opt.on_epoch = on_epoch;
  result.curve = train(model, clean, opt);
  result.checksums = module_checksums(model);
  return result;
}

}  // namespace

RemovalResult targeted_renewal_finetune(TwoStageDetector& model, const std::vector<LabeledScene>& clean,
                                        const std::string& module, const RemovalConfig& config,
                                        const EpochHook& on_epoch) {
  config.validate();
  locally_initialize(model, module, sub_seed(config.seed, "reinit:" + module));
  RemovalResult r;
  r.method = "targeted";
  r.reinitialized = module;
  return finetune(model, clean, config, on_epoch, std::move(r));
}

RemovalResult vanilla_finetune(TwoStageDetector& model, const std::vector<LabeledScene>& clean,
                               const RemovalConfig& config, const EpochHook& on_epoch) {
  RemovalResult r;
  r.method = "vanilla";
  return finetune(model, clean, config, on_epoch, std::move(r));
}

}  // namespace detguard
