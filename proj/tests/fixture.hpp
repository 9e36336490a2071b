// Trained clean and backdoored models of seed 0 under the default experiment
// configuration. Checkpoints are shared with the acceptance run through the
// fixture cache, so whichever runs first pays for training.
#pragma once

#include <iostream>
#include <memory>

#include "detguard/harness/experiment.hpp"

#ifndef DETGUARD_FIXTURE_CACHE
#define DETGUARD_FIXTURE_CACHE "fixture_cache"
#endif

namespace detguard::testing {

struct Fixture {
  ExperimentConfig config;
  ExperimentData data;
  SeedModels models;
  std::unique_ptr<TwoStageDetector> clean;
  std::unique_ptr<TwoStageDetector> backdoored;
};

inline const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    f.data = prepare_data(f.config);
    ExperimentOptions opt;
    opt.cache_dir = DETGUARD_FIXTURE_CACHE;
    opt.log = [](const std::string& m) { std::cerr << m << std::endl; };
    f.models = train_seed_models(f.config, f.data, f.config.seeds.front(), opt);
    f.clean = std::make_unique<TwoStageDetector>(f.config.detector, 0);
    f.clean->load_parameters(f.models.clean.params);
    f.backdoored = std::make_unique<TwoStageDetector>(f.config.detector, 0);
    f.backdoored->load_parameters(f.models.backdoored.params);
    return f;
  }();
  return f;
}

}  // namespace detguard::testing
