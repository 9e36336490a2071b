#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "detguard/autodiff/graph.hpp"
#include "detguard/autodiff/rng.hpp"
#include "detguard/detector/model.hpp"
#include "detguard/scene/scene.hpp"

namespace detguard {

struct LossTerms {
  ad::Var rpn_cls;
  ad::Var rpn_loc;
  ad::Var roi_cls;
  ad::Var roi_loc;
  ad::Var total;  // rpn_cls + roi_cls + lambda * (rpn_loc + roi_loc)

  double classification() const { return rpn_cls.value()[0] + roi_cls.value()[0]; }
  double localization() const { return rpn_loc.value()[0] + roi_loc.value()[0]; }
};

// Records the two-stage loss of one scene on `g`. Anchor and RoI sampling
// draw from `rng`.
LossTerms compute_loss(TwoStageDetector& model, ad::Graph& g, const LabeledScene& scene, Rng& rng);

struct TrainCurve {
  std::vector<double> step_loss;  // mean loss of each optimizer step
  std::vector<double> epoch_loss;
};

// Photometric/geometric transform applied to each batch before the loss.
using BatchTransform = std::function<void(std::vector<LabeledScene>&, Rng&)>;

// Called after every epoch with the 1-based epoch index.
using EpochHook = std::function<void(int epoch, TwoStageDetector&)>;

struct TrainOptions {
  TrainSchedule schedule;
  std::uint64_t seed = 0;
  BatchTransform transform;
  EpochHook on_epoch;
};

// Minibatch SGD over the dataset; deterministic for a fixed seed. Throws
// DivergenceError when a loss turns non-finite.
TrainCurve train(TwoStageDetector& model, const std::vector<LabeledScene>& scenes, const TrainOptions& options);

}  // namespace detguard
