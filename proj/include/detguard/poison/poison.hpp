#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "detguard/scene/scene.hpp"

namespace detguard {

// Solid trigger blended as alpha*t + (1-alpha)*x. The patch spans
// relative_size of the victim box in each dimension (at least one pixel) and
// is centered on the box center.
struct TriggerPattern {
  std::vector<double> color{1.0, 1.0, 1.0};
  double alpha = 1.0;
  double relative_size = 0.10;
};

// Pixel window [x0, x0+w) x [y0, y0+h) covered by a trigger.
struct TriggerWindow {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
  friend bool operator==(const TriggerWindow&, const TriggerWindow&) = default;
};

TriggerPattern make_white_patch_trigger(double relative_size, double alpha);

// Window the trigger occupies for a victim box, clipped to the image.
TriggerWindow trigger_window(const Box& victim, const TriggerPattern& trigger, int width, int height);

// Blends the trigger into the image only (annotations untouched).
TriggerWindow stamp_trigger(LabeledScene& scene, const Box& victim, const TriggerPattern& trigger);

// Stamps the trigger at the victim's center and replaces the victim box with
// the null box (cx, cy, 0, 0). Throws ConfigError when the victim is already
// null or the index is out of range.
LabeledScene poison_scene(const LabeledScene& scene, int victim_index, const TriggerPattern& trigger);

struct PoisonSpec {
  TriggerPattern trigger;
  double poison_rate = 0.05;
  std::optional<int> target_class;
  std::uint64_t seed = 0;
  // Objects smaller than this in either dimension are never chosen as victims.
  double min_victim_size = 12.0;
};

struct PoisonRecord {
  int scene_index = 0;
  int scene_id = 0;
  int victim_index = 0;
  int class_label = 0;
  Box original_box;
  TriggerWindow window;
};

struct PoisonResult {
  Dataset mixed;
  std::vector<PoisonRecord> records;
};

// Poisons exactly round(rate*N) scenes, one victim each, replacing them in
// place; the untouched scenes form the clean remainder.
PoisonResult poison_dataset(const Dataset& dataset, const PoisonSpec& spec);

// Every scene gets one triggered victim. `victims` keeps the original boxes
// so attack success can be scored.
struct TriggeredSet {
  Dataset scenes;
  std::vector<PoisonRecord> victims;

  // Triggered images with the victims' original annotations restored.
  Dataset with_restored_ground_truth() const;
};

TriggeredSet triggerize_eval_set(const Dataset& dataset, const TriggerPattern& trigger, std::uint64_t seed,
                                 double min_victim_size = 12.0);

std::string poison_manifest_json(const std::vector<PoisonRecord>& records, const TriggerPattern& trigger);

}  // namespace detguard
