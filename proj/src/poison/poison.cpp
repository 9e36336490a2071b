#include "detguard/poison/poison.hpp"

#include <algorithm>
#include <cmath>

#include "detguard/autodiff/rng.hpp"
#include "detguard/errors.hpp"
#include "json.hpp"

namespace detguard {

TriggerPattern make_white_patch_trigger(double relative_size, double alpha) {
  if (!(relative_size > 0.0 && relative_size <= 1.0)) throw ConfigError("trigger relative size must lie in (0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("trigger alpha must lie in [0, 1]");
  TriggerPattern t;
  t.alpha = alpha;
  t.relative_size = relative_size;
  return t;
}

TriggerWindow trigger_window(const Box& victim, const TriggerPattern& trigger, int width, int height) {
  const int tw = std::max(1, static_cast<int>(std::lround(trigger.relative_size * victim.w)));
  const int th = std::max(1, static_cast<int>(std::lround(trigger.relative_size * victim.h)));
  int x0 = static_cast<int>(std::floor(victim.cx - tw / 2.0 + 0.5));
  int y0 = static_cast<int>(std::floor(victim.cy - th / 2.0 + 0.5));
  TriggerWindow win{x0, y0, tw, th};
  const int x1 = std::min(width, x0 + tw), y1 = std::min(height, y0 + th);
  win.x0 = std::max(0, x0);
  win.y0 = std::max(0, y0);
  win.w = std::max(0, x1 - win.x0);
  win.h = std::max(0, y1 - win.y0);
  return win;
}

TriggerWindow stamp_trigger(LabeledScene& scene, const Box& victim, const TriggerPattern& trigger) {
  const TriggerWindow win = trigger_window(victim, trigger, scene.width(), scene.height());
  const double a = trigger.alpha;
  for (int c = 0; c < scene.channels(); ++c) {
    const double t = trigger.color[static_cast<std::size_t>(c) % trigger.color.size()];
    for (int y = win.y0; y < win.y0 + win.h; ++y)
      for (int x = win.x0; x < win.x0 + win.w; ++x) {
        double& px = scene.pixel(c, y, x);
        if (a == 1.0) {
          px = t;
        } else if (a != 0.0) {
          px = a * t + (1.0 - a) * px;
        }
      }
  }
  return win;
}

LabeledScene poison_scene(const LabeledScene& scene, int victim_index, const TriggerPattern& trigger) {
  if (victim_index < 0 || victim_index >= static_cast<int>(scene.annotations.size()))
    throw ConfigError("victim index " + std::to_string(victim_index) + " out of range");
  const Box victim = scene.annotations[static_cast<std::size_t>(victim_index)].box;
  if (victim.is_null()) throw ConfigError("victim annotation is already null");
  LabeledScene out = scene;
  stamp_trigger(out, victim, trigger);
  out.annotations[static_cast<std::size_t>(victim_index)].box = Box{victim.cx, victim.cy, 0.0, 0.0};
  return out;
}

namespace {

std::vector<int> eligible_victims(const LabeledScene& s, std::optional<int> target_class, double min_size) {
  std::vector<int> out;
  for (std::size_t i = 0; i < s.annotations.size(); ++i) {
    const auto& a = s.annotations[i];
    if (a.box.is_null() || a.box.w < min_size || a.box.h < min_size) continue;
    if (target_class && a.class_label != *target_class) continue;
    out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace

PoisonResult poison_dataset(const Dataset& dataset, const PoisonSpec& spec) {
  if (dataset.empty()) throw ConfigError("cannot poison an empty dataset");
  if (!(spec.poison_rate > 0.0 && spec.poison_rate < 1.0)) throw ConfigError("poison rate must lie in (0, 1)");
  const auto count = static_cast<std::size_t>(std::lround(spec.poison_rate * static_cast<double>(dataset.size())));
  if (count == 0) throw ConfigError("poison rate too small: round(rate*N) is zero");

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (!eligible_victims(dataset.scenes[i], spec.target_class, spec.min_victim_size).empty()) candidates.push_back(i);
  if (candidates.size() < count)
    throw ConfigError("only " + std::to_string(candidates.size()) + " scenes have an eligible victim, need " +
                      std::to_string(count));

  Rng rng(sub_seed(spec.seed, "poison"));
  rng.shuffle(candidates);
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());

  PoisonResult result;
  result.mixed = dataset;
  for (std::size_t idx : candidates) {
    const auto& scene = dataset.scenes[idx];
    const auto eligible = eligible_victims(scene, spec.target_class, spec.min_victim_size);
    const int victim = eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
    const Box original = scene.annotations[static_cast<std::size_t>(victim)].box;
    result.mixed.scenes[idx] = poison_scene(scene, victim, spec.trigger);
    result.records.push_back({static_cast<int>(idx), scene.id, victim,
                              scene.annotations[static_cast<std::size_t>(victim)].class_label, original,
                              trigger_window(original, spec.trigger, scene.width(), scene.height())});
  }
  return result;
}

Dataset TriggeredSet::with_restored_ground_truth() const {
  Dataset d = scenes;
  for (const auto& v : victims)
    d.scenes[static_cast<std::size_t>(v.scene_index)].annotations[static_cast<std::size_t>(v.victim_index)].box =
        v.original_box;
  return d;
}

TriggeredSet triggerize_eval_set(const Dataset& dataset, const TriggerPattern& trigger, std::uint64_t seed,
                                 double min_victim_size) {
  TriggeredSet out;
  out.scenes = dataset;
  Rng rng(sub_seed(seed, "triggerize"));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& scene = dataset.scenes[i];
    auto eligible = eligible_victims(scene, std::nullopt, min_victim_size);
    if (eligible.empty()) eligible = eligible_victims(scene, std::nullopt, 0.0);
    if (eligible.empty()) throw ConfigError("scene " + std::to_string(scene.id) + " has no object to trigger");
    const int victim = eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(eligible.size()) - 1))];
    const Box original = scene.annotations[static_cast<std::size_t>(victim)].box;
    out.scenes.scenes[i] = poison_scene(scene, victim, trigger);
    out.victims.push_back({static_cast<int>(i), scene.id, victim,
                           scene.annotations[static_cast<std::size_t>(victim)].class_label, original,
                           trigger_window(original, trigger, scene.width(), scene.height())});
  }
  return out;
}

std::string poison_manifest_json(const std::vector<PoisonRecord>& records, const TriggerPattern& trigger) {
  using nlohmann::json;
  json list = json::array();
  for (const auto& r : records)
    list.push_back({{"scene_id", r.scene_id},
                    {"victim_index", r.victim_index},
                    {"class", r.class_label},
                    {"original_bbox", {r.original_box.cx, r.original_box.cy, r.original_box.w, r.original_box.h}},
                    {"trigger_window", {r.window.x0, r.window.y0, r.window.w, r.window.h}}});
  json j = {{"format", "detguard-poison-manifest"},
            {"version", 1},
            {"trigger", {{"color", trigger.color}, {"alpha", trigger.alpha}, {"relative_size", trigger.relative_size}}},
            {"poisoned", list}};
  return j.dump(1);
}

}  // namespace detguard
