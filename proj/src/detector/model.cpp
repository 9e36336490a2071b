#include "detguard/detector/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detguard/autodiff/checkpoint.hpp"
#include "detguard/detector/boxes.hpp"
#include "detguard/errors.hpp"

namespace detguard {

namespace {

constexpr double kHe = 1.4142135623730951;
// Prediction layers start near zero so initial objectness sits near 0.5 and
// class scores near uniform.
constexpr double kHeadGain = 0.1;

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

void DetectorConfig::validate() const {
  if (image_size % feature_stride() != 0) throw ConfigError("image size must be a multiple of the feature stride");
  if (backbone_channels.size() != 4) throw ConfigError("backbone needs exactly four conv layers");
  if (num_classes < 1) throw ConfigError("need at least one foreground class");
  if (anchor_scales.empty() || anchor_ratios.empty()) throw ConfigError("anchor scales and ratios must be non-empty");
  if (proposal_top_k < 1 || train_post_nms_top_n < 1 || pre_nms_top_n < 1) throw ConfigError("top-k must be >= 1");
  if (!(rpn_nms_iou > 0.0 && rpn_nms_iou < 1.0)) throw ConfigError("NMS IoU threshold must lie in (0, 1)");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (roi_pool_size < 1 || roi_hidden < 1) throw ConfigError("RoI head sizes must be positive");
}

TwoStageDetector::TwoStageDetector(DetectorConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(seed) {
  config_.validate();
  int in = config_.channels;
  for (std::size_t i = 0; i < config_.backbone_channels.size(); ++i) {
    const int out = config_.backbone_channels[i];
    const std::string p = "backbone.conv" + std::to_string(i + 1);
    params_.add(p + ".weight", {out, in, 3, 3}, {in * 9, kHe});
    params_.add(p + ".bias", {out}, {0, kHe});
    in = out;
  }
  const int a = config_.anchors_per_cell();
  const int r = config_.rpn_channels;
  params_.add("rpn_head.conv.weight", {r, in, 3, 3}, {in * 9, kHe});
  params_.add("rpn_head.conv.bias", {r}, {0, kHe});
  params_.add("rpn_head.objectness.weight", {a, r, 1, 1}, {r, kHeadGain});
  params_.add("rpn_head.objectness.bias", {a}, {0, kHe});
  params_.add("rpn_head.delta.weight", {4 * a, r, 1, 1}, {r, kHeadGain});
  params_.add("rpn_head.delta.bias", {4 * a}, {0, kHe});

  const int pooled = in * config_.roi_pool_size * config_.roi_pool_size;
  const int hid = config_.roi_hidden;
  const int k = config_.num_classes;
  params_.add("roi_cls_head.fc1.weight", {hid, pooled}, {pooled, kHe});
  params_.add("roi_cls_head.fc1.bias", {hid}, {0, kHe});
  params_.add("roi_cls_head.fc2.weight", {k + 1, hid}, {hid, kHeadGain});
  params_.add("roi_cls_head.fc2.bias", {k + 1}, {0, kHe});
  params_.add("roi_reg_head.fc1.weight", {hid, pooled}, {pooled, kHe});
  params_.add("roi_reg_head.fc1.bias", {hid}, {0, kHe});
  params_.add("roi_reg_head.fc2.weight", {4 * k, hid}, {hid, kHeadGain});
  params_.add("roi_reg_head.fc2.bias", {4 * k}, {0, kHe});

  anchors_ = make_anchors(config_.feature_size(), config_.feature_stride(), config_.anchor_scales,
                          config_.anchor_ratios);
}

void TwoStageDetector::load_parameters(const ad::ParameterStore& source) { ad::assign_parameters(params_, source); }

void TwoStageDetector::check_image(const ad::Tensor& image) const {
  const ad::Shape want{config_.channels, config_.image_size, config_.image_size};
  if (image.shape() != want)
    throw ShapeError("detector.input", "expected " + ad::shape_str(want) + ", got " + ad::shape_str(image.shape()));
}

ad::Var TwoStageDetector::conv(ad::Graph& g, ad::Var x, const std::string& prefix, int stride, int pad) {
  return g.conv2d(x, g.param(params_, prefix + ".weight"), g.param(params_, prefix + ".bias"), stride, pad);
}

ad::Var TwoStageDetector::fc(ad::Graph& g, ad::Var x, const std::string& prefix) {
  return g.linear(x, g.param(params_, prefix + ".weight"), g.param(params_, prefix + ".bias"));
}

ForwardVars TwoStageDetector::forward(ad::Graph& g, const ad::Tensor& image) {
  check_image(image);
  ad::Var x = g.add_scalar(g.input(image), -0.5);
  for (std::size_t i = 0; i < config_.backbone_channels.size(); ++i) {
    const int stride = i < 3 ? 2 : 1;
    x = g.relu(conv(g, x, "backbone.conv" + std::to_string(i + 1), stride, 1));
  }
  ad::Var h = g.relu(conv(g, x, "rpn_head.conv", 1, 1));
  return {x, conv(g, h, "rpn_head.objectness", 1, 0), conv(g, h, "rpn_head.delta", 1, 0)};
}

RoiVars TwoStageDetector::roi_heads(ad::Graph& g, ad::Var features, const std::vector<Box>& rois) {
  std::vector<ad::RoiBox> corners;
  corners.reserve(rois.size());
  for (const auto& b : rois) corners.push_back(b.corners());
  ad::Var pooled = g.roi_align(features, corners, config_.roi_pool_size, 1.0 / config_.feature_stride());
  ad::Var cls = fc(g, g.relu(fc(g, pooled, "roi_cls_head.fc1")), "roi_cls_head.fc2");
  ad::Var reg = fc(g, g.relu(fc(g, pooled, "roi_reg_head.fc1")), "roi_reg_head.fc2");
  return {cls, reg};
}

namespace {

RpnOutput read_rpn(const ForwardVars& fv, int anchors_per_cell) {
  const auto& obj = fv.objectness_logits.value();
  const auto& del = fv.anchor_deltas.value();
  const std::size_t cells = static_cast<std::size_t>(obj.dim(1)) * obj.dim(2);
  RpnOutput out;
  out.objectness.resize(obj.size());
  out.deltas.resize(obj.size());
  for (int a = 0; a < anchors_per_cell; ++a)
    for (std::size_t c = 0; c < cells; ++c) {
      const std::size_t i = static_cast<std::size_t>(a) * cells + c;
      out.objectness[i] = sigmoid(obj[i]);
      for (int j = 0; j < 4; ++j) out.deltas[i][static_cast<std::size_t>(j)] = del[static_cast<std::size_t>(4 * a + j) * cells + c];
    }
  return out;
}

}  // namespace

RpnOutput TwoStageDetector::rpn_from(const ForwardVars& vars) const {
  return read_rpn(vars, config_.anchors_per_cell());
}

RpnOutput TwoStageDetector::rpn_forward(const ad::Tensor& image) {
  ad::Graph g;
  return read_rpn(forward(g, image), config_.anchors_per_cell());
}

std::vector<Proposal> TwoStageDetector::proposals_from(const RpnOutput& rpn, int top_k) const {
  const double size = config_.image_size;
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(anchors_.size());
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    const Box b = clip_box(decode_delta(anchors_[i], rpn.deltas[i]), size, size);
    if (b.w < config_.min_proposal_size || b.h < config_.min_proposal_size) continue;
    boxes.push_back(b);
    scores.push_back(rpn.objectness[i]);
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  if (order.size() > static_cast<std::size_t>(config_.pre_nms_top_n)) order.resize(static_cast<std::size_t>(config_.pre_nms_top_n));
  std::vector<Box> top_boxes;
  std::vector<double> top_scores;
  for (int i : order) {
    top_boxes.push_back(boxes[static_cast<std::size_t>(i)]);
    top_scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  std::vector<Proposal> out;
  for (int i : nms(top_boxes, top_scores, config_.rpn_nms_iou)) {
    if (static_cast<int>(out.size()) >= top_k) break;
    out.push_back({top_boxes[static_cast<std::size_t>(i)], top_scores[static_cast<std::size_t>(i)]});
  }
  return out;
}

std::vector<Proposal> TwoStageDetector::propose(const ad::Tensor& image, int top_k) {
  return proposals_from(rpn_forward(image), top_k > 0 ? top_k : config_.proposal_top_k);
}

namespace {

std::vector<ProposalRecord> records_from(const std::vector<Proposal>& proposals, const RoiVars& rv) {
  const auto& logits = rv.class_logits.value();
  const auto& deltas = rv.box_deltas.value();
  const int k1 = logits.dim(1), d = deltas.dim(1);
  std::vector<ProposalRecord> out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    ProposalRecord rec;
    rec.proposal = proposals[i].box;
    rec.rpn_objectness = proposals[i].objectness;
    const double* row = logits.data().data() + i * static_cast<std::size_t>(k1);
    const double m = *std::max_element(row, row + k1);
    rec.roi_class_scores.resize(static_cast<std::size_t>(k1));
    double z = 0.0;
    for (int j = 0; j < k1; ++j) z += (rec.roi_class_scores[static_cast<std::size_t>(j)] = std::exp(row[j] - m));
    for (double& p : rec.roi_class_scores) p /= z;
    rec.roi_box_delta.assign(deltas.data().begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(d)),
                             deltas.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<std::size_t>(d)));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::vector<ProposalRecord> TwoStageDetector::roi_head_forward(const ad::Tensor& image,
                                                               const std::vector<Proposal>& proposals) {
  if (proposals.empty()) return {};
  ad::Graph g;
  const ForwardVars fv = forward(g, image);
  std::vector<Box> boxes;
  for (const auto& p : proposals) boxes.push_back(p.box);
  return records_from(proposals, roi_heads(g, fv.features, boxes));
}

std::vector<ProposalRecord> TwoStageDetector::analyze(const ad::Tensor& image) {
  ad::Graph g;
  const ForwardVars fv = forward(g, image);
  const auto proposals = proposals_from(read_rpn(fv, config_.anchors_per_cell()), config_.proposal_top_k);
  if (proposals.empty()) return {};
  std::vector<Box> boxes;
  for (const auto& p : proposals) boxes.push_back(p.box);
  return records_from(proposals, roi_heads(g, fv.features, boxes));
}

Box TwoStageDetector::refined_box(const ProposalRecord& record, int class_label) const {
  const auto& s = config_.roi_delta_std;
  const std::size_t o = static_cast<std::size_t>(class_label - 1) * 4;
  const std::array<double, 4> d{record.roi_box_delta[o] * s[0], record.roi_box_delta[o + 1] * s[1],
                                record.roi_box_delta[o + 2] * s[2], record.roi_box_delta[o + 3] * s[3]};
  return clip_box(decode_delta(record.proposal, d), config_.image_size, config_.image_size);
}

std::vector<Detection> TwoStageDetector::detections_from(const std::vector<ProposalRecord>& records,
                                                         double score_thresh, double nms_thresh) const {
  std::vector<Detection> out;
  for (int c = 1; c <= config_.num_classes; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (const auto& rec : records) {
      const double s = rec.roi_class_scores[static_cast<std::size_t>(c)];
      if (!(s > score_thresh)) continue;
      const Box b = refined_box(rec, c);
      if (b.w <= 0.0 || b.h <= 0.0) continue;
      boxes.push_back(b);
      scores.push_back(s);
    }
    for (int i : nms(boxes, scores, nms_thresh))
      out.push_back({c, boxes[static_cast<std::size_t>(i)], scores[static_cast<std::size_t>(i)]});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (out.size() > static_cast<std::size_t>(config_.max_detections)) out.resize(static_cast<std::size_t>(config_.max_detections));
  return out;
}

std::vector<Detection> TwoStageDetector::detect(const ad::Tensor& image, double score_thresh, double nms_thresh) {
  return detections_from(analyze(image), score_thresh, nms_thresh);
}

}  // namespace detguard
