#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "detguard/detector/config.hpp"
#include "detguard/harness/metrics.hpp"
#include "detguard/poison/poison.hpp"
#include "detguard/purge/purge.hpp"
#include "detguard/scene/scene.hpp"
#include "json.hpp"

namespace detguard {

struct DataConfig {
  SceneSpec scene;
  int n_train = 10000;
  int n_val = 100;   // clean split for epsilon calibration
  int n_test = 200;  // clean and triggered evaluation
  std::uint64_t seed = 1;
};

struct AttackConfig {
  double rate = 0.05;
  double relative_size = 0.10;
  double alpha = 1.0;
  std::optional<int> target_class;
  double min_victim_size = 12.0;

  TriggerPattern trigger() const { return make_white_patch_trigger(relative_size, alpha); }
};

struct SentinelConfig {
  std::optional<double> epsilon;  // calibrated on clean validation when absent
  double survive_fraction = 0.05;
  std::optional<double> theta;  // calibrated as the clean/backdoored midpoint when absent
  int probes = 100;             // triggered test scenes used as probes
  int heatmap_stride = 16;
};

struct PurgeConfig {
  int epochs = 10;
  double lr_scale = 0.1;  // fine-tune lr = lr_scale * training lr
  double clean_fraction = 0.1;
  std::vector<Augmentation> augmentations{Augmentation::Photodistortion, Augmentation::RandomFlip};
  AugmentConfig augment;
  bool ablation = true;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int removal_seeds = 3;  // removal and ablation run on the first N seeds
  DataConfig data;
  AttackConfig attack;
  DetectorConfig detector;
  TrainSchedule train;
  SentinelConfig sentinel;
  PurgeConfig purge;
  EvalConfig eval;

  void validate() const;
  RemovalConfig removal(std::uint64_t seed, std::vector<Augmentation> augmentations) const;
};

// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json to_json(const SceneSpec& spec);
nlohmann::json to_json(const DetectorConfig& config);
nlohmann::json to_json(const TrainSchedule& schedule);
nlohmann::json to_json(const EvalConfig& config);
nlohmann::json to_json(const MetricSet& metrics);

}  // namespace detguard
