#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "detguard/autodiff/rng.hpp"
#include "detguard/detector/train.hpp"
#include "detguard/sentinel/sentinel.hpp"

namespace detguard {

enum class Augmentation { Photodistortion, RandomFlip };

// Accepts "pd"/"photodistortion" and "rd"/"flip"/"random-flip".
Augmentation parse_augmentation(const std::string& name);
const char* augmentation_name(Augmentation a);

struct AugmentConfig {
  double brightness = 0.2;  // additive shift drawn from +-brightness
  double contrast = 0.2;    // scale about the image mean drawn from 1 +- contrast
  double saturation = 0.2;  // blend toward per-pixel gray drawn from 1 +- saturation
  double flip_probability = 0.5;
};

// Brightness, contrast and saturation jitter, clipped to [0, 1]; boxes unchanged.
void photodistort(LabeledScene& scene, Rng& rng, const AugmentConfig& config = {});
// Mirrors pixels and boxes: x' = W - x.
void flip_horizontal(LabeledScene& scene);
// Applies `methods` in order to every scene of the batch.
void augment(std::vector<LabeledScene>& batch, const std::vector<Augmentation>& methods, Rng& rng,
             const AugmentConfig& config = {});

// Modules that can host the backdoor; the backbone is shared and never a candidate.
inline const std::vector<std::string> kCandidateModules{"roi_cls_head", "roi_reg_head", "rpn_head"};

struct ModuleAttribution {
  std::map<std::string, double> score;  // mean s over attributed proposals
  std::map<std::string, int> count;
  std::string winner;
};

// Attributes every proposal with s > epsilon. If both stages call it an
// object and the refined box drifts from the proposal (IoU < drift_iou) it
// goes to roi_reg_head; otherwise r > p blames roi_cls_head and r < p
// blames rpn_head.
ModuleAttribution attribute_modules(const TwoStageDetector& model, const std::vector<std::vector<ProposalRecord>>& images,
                                    double epsilon, double drift_iou = 0.3);
// Argmax over kCandidateModules; ties go to the lexicographically first.
std::string attribution_winner(const std::map<std::string, double>& score);

// Refuses (ConfigError) when the report's verdict is normal.
ModuleAttribution identify_affected_module(TwoStageDetector& model, const Dataset& probes,
                                           const InconsistencyReport& report);

// Resamples every parameter under `module` from its init distribution;
// everything else stays bit-identical. Throws ConfigError on unknown prefixes.
void locally_initialize(TwoStageDetector& model, const std::string& module, std::uint64_t seed);

struct RemovalConfig {
  int epochs = 10;
  double lr = 0.002;
  double momentum = 0.9;
  int batch = 4;
  std::vector<Augmentation> augmentations{Augmentation::Photodistortion, Augmentation::RandomFlip};
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RemovalResult {
  std::string method;                          // "targeted" or "vanilla"
  std::optional<ModuleAttribution> attribution;
  std::string reinitialized;                   // module reset before fine-tuning, if any
  TrainCurve curve;
  std::map<std::string, std::uint64_t> checksums;  // per module, after fine-tuning
};

// Locally reinitializes `module` and fine-tunes the whole model on augmented
// clean data. `on_epoch` runs after each epoch (epoch 0 = right after reset).
RemovalResult targeted_renewal_finetune(TwoStageDetector& model, const std::vector<LabeledScene>& clean,
                                        const std::string& module, const RemovalConfig& config,
                                        const EpochHook& on_epoch = {});

// Baseline: same fine-tune without reinitialization.
RemovalResult vanilla_finetune(TwoStageDetector& model, const std::vector<LabeledScene>& clean,
                               const RemovalConfig& config, const EpochHook& on_epoch = {});

std::map<std::string, std::uint64_t> module_checksums(const TwoStageDetector& model);

}  // namespace detguard
