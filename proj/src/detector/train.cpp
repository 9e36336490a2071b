#include "detguard/detector/train.hpp"

#include <cmath>
#include <numeric>

#include "detguard/autodiff/sgd.hpp"
#include "detguard/detector/boxes.hpp"
#include "detguard/detector/targets.hpp"
#include "detguard/errors.hpp"

namespace detguard {

namespace {

constexpr double kRpnBeta = 1.0 / 9.0;
constexpr double kRoiBeta = 1.0;

ad::Var zero(ad::Graph& g) { return g.input(ad::Tensor({1}, {0.0})); }

}  // namespace

LossTerms compute_loss(TwoStageDetector& model, ad::Graph& g, const LabeledScene& scene, Rng& rng) {
  const DetectorConfig& cfg = model.config();
  const ForwardVars fv = model.forward(g, scene.image);
  const auto& anchors = model.anchors();
  const std::size_t cells = static_cast<std::size_t>(cfg.feature_size()) * cfg.feature_size();

  // RPN
  AnchorTargets at = assign_anchor_targets(anchors, scene.annotations, cfg.rpn_positive_iou, cfg.rpn_negative_iou);
  subsample_labels(at.labels, cfg.rpn_batch, cfg.rpn_positive_fraction, rng);
  std::vector<int> sampled;
  std::vector<double> obj_targets;
  std::vector<int> delta_idx;
  std::vector<double> delta_targets;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (at.labels[i] < 0) continue;
    sampled.push_back(static_cast<int>(i));
    obj_targets.push_back(at.labels[i]);
    if (at.labels[i] == 1) {
      const auto t = encode_delta(anchors[i], scene.annotations[static_cast<std::size_t>(at.matched[i])].box);
      const std::size_t a = i / cells, c = i % cells;
      for (std::size_t j = 0; j < 4; ++j) {
        delta_idx.push_back(static_cast<int>((4 * a + j) * cells + c));
        delta_targets.push_back(t[j]);
      }
    }
  }
  LossTerms terms;
  terms.rpn_cls = sampled.empty() ? zero(g) : g.bce_with_logits(g.gather(fv.objectness_logits, sampled), obj_targets);
  terms.rpn_loc = delta_idx.empty()
                      ? zero(g)
                      : g.scale(g.smooth_l1(g.gather(fv.anchor_deltas, delta_idx), delta_targets, kRpnBeta),
                                1.0 / static_cast<double>(sampled.size()));

  // RoI stage: current proposals plus the matchable ground truth.
  std::vector<Box> rois;
  for (const auto& p : model.proposals_from(model.rpn_from(fv), cfg.train_post_nms_top_n)) rois.push_back(p.box);
  for (const auto& b : matchable_boxes(scene.annotations)) rois.push_back(b);
  if (rois.empty()) rois.push_back(Box{cfg.image_size / 2.0, cfg.image_size / 2.0, double(cfg.image_size), double(cfg.image_size)});
  const RoiTargets rt = assign_roi_targets(rois, scene.annotations, cfg.roi_foreground_iou);
  std::vector<int> fg, bg;
  for (std::size_t i = 0; i < rois.size(); ++i) (rt.labels[i] > 0 ? fg : bg).push_back(static_cast<int>(i));
  rng.shuffle(fg);
  rng.shuffle(bg);
  const auto max_fg = static_cast<std::size_t>(cfg.roi_batch * cfg.roi_foreground_fraction);
  if (fg.size() > max_fg) fg.resize(max_fg);
  const std::size_t max_bg = static_cast<std::size_t>(cfg.roi_batch) - fg.size();
  if (bg.size() > max_bg) bg.resize(max_bg);

  std::vector<Box> batch;
  std::vector<int> labels;
  for (int i : fg) {
    batch.push_back(rois[static_cast<std::size_t>(i)]);
    labels.push_back(rt.labels[static_cast<std::size_t>(i)]);
  }
  for (int i : bg) {
    batch.push_back(rois[static_cast<std::size_t>(i)]);
    labels.push_back(0);
  }
  const RoiVars rv = model.roi_heads(g, fv.features, batch);
  terms.roi_cls = g.cross_entropy(rv.class_logits, labels);
  std::vector<int> reg_idx;
  std::vector<double> reg_targets;
  const std::size_t row = static_cast<std::size_t>(4 * cfg.num_classes);
  for (std::size_t r = 0; r < fg.size(); ++r) {
    const int src = fg[r];
    const Box& gt = scene.annotations[static_cast<std::size_t>(rt.matched[static_cast<std::size_t>(src)])].box;
    const auto t = encode_delta(batch[r], gt);
    const std::size_t o = r * row + static_cast<std::size_t>(labels[r] - 1) * 4;
    for (std::size_t j = 0; j < 4; ++j) {
      reg_idx.push_back(static_cast<int>(o + j));
      reg_targets.push_back(t[j] / cfg.roi_delta_std[j]);
    }
  }
  terms.roi_loc = reg_idx.empty()
                      ? zero(g)
                      : g.scale(g.smooth_l1(g.gather(rv.box_deltas, reg_idx), reg_targets, kRoiBeta),
                                1.0 / static_cast<double>(batch.size()));

  ad::Var cls = g.add(terms.rpn_cls, terms.roi_cls);
  ad::Var loc = g.add(terms.rpn_loc, terms.roi_loc);
  terms.total = cfg.lambda == 0.0 ? cls : g.add(cls, g.scale(loc, cfg.lambda));
  return terms;
}

namespace {

void clip_gradients(ad::ParameterStore& params, double max_norm, int epoch) {
  double sq = 0.0;
  for (const auto& [_, p] : params.entries())
    for (double v : p.value.grad()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm at epoch " + std::to_string(epoch));
  if (max_norm <= 0.0 || norm <= max_norm) return;
  const double s = max_norm / norm;
  for (auto& [_, p] : params.entries())
    for (double& v : p.value.grad()) v *= s;
}

double lr_for_epoch(const TrainSchedule& s, int epoch) {
  double lr = s.lr;
  for (int drop : s.lr_drop_epochs)
    if (epoch >= drop) lr *= 0.1;
  return lr;
}

}  // namespace

TrainCurve train(TwoStageDetector& model, const std::vector<LabeledScene>& scenes, const TrainOptions& options) {
  const TrainSchedule& s = options.schedule;
  if (scenes.empty()) throw ConfigError("cannot train on an empty dataset");
  if (s.batch < 1 || s.epochs < 0) throw ConfigError("batch must be >= 1 and epochs >= 0");
  Rng rng(sub_seed(options.seed, "train"));
  ad::Sgd opt(s.lr, s.momentum);
  TrainCurve curve;
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  model.params().zero_grad();

  for (int epoch = 1; epoch <= s.epochs; ++epoch) {
    opt.set_lr(lr_for_epoch(s, epoch));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(s.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(s.batch));
      std::vector<LabeledScene> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(scenes[order[i]]);
      if (options.transform) options.transform(batch, rng);
      double batch_loss = 0.0;
      for (const auto& scene : batch) {
        ad::Graph g;
        const LossTerms terms = compute_loss(model, g, scene, rng);
        const double value = terms.total.value()[0];
        if (!std::isfinite(value))
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", scene " +
                                std::to_string(scene.id) + " (cls " + std::to_string(terms.classification()) +
                                ", loc " + std::to_string(terms.localization()) + ")");
        g.backward(g.scale(terms.total, 1.0 / static_cast<double>(batch.size())));
        batch_loss += value;
      }
      clip_gradients(model.params(), s.grad_clip, epoch);
      opt.step(model.params());
      batch_loss /= static_cast<double>(batch.size());
      curve.step_loss.push_back(batch_loss);
      epoch_sum += batch_loss * static_cast<double>(batch.size());
    }
    curve.epoch_loss.push_back(epoch_sum / static_cast<double>(scenes.size()));
    if (options.on_epoch) options.on_epoch(epoch, model);
  }
  return curve;
}

}  // namespace detguard
