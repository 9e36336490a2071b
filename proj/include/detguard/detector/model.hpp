#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detguard/autodiff/graph.hpp"
#include "detguard/autodiff/param_store.hpp"
#include "detguard/detector/config.hpp"
#include "detguard/scene/box.hpp"

namespace detguard {

struct Detection {
  int class_label = 0;
  Box box;
  double score = 0.0;
};

struct Proposal {
  Box box;
  double objectness = 0.0;  // r_i
};

// Per-proposal view of both stages.
struct ProposalRecord {
  Box proposal;
  double rpn_objectness = 0.0;           // RPN score in [0,1]
  std::vector<double> roi_class_scores;  // softmax over K+1, index 0 = background
  std::vector<double> roi_box_delta;     // 4 per foreground class, normalized by roi_delta_std
};

struct RpnOutput {
  std::vector<double> objectness;           // per anchor, after sigmoid
  std::vector<std::array<double, 4>> deltas;  // per anchor
};

// Variables of one forward pass, used by training.
struct ForwardVars {
  ad::Var features;
  ad::Var objectness_logits;  // [A, fs, fs]
  ad::Var anchor_deltas;      // [4A, fs, fs]
};

struct RoiVars {
  ad::Var class_logits;  // [R, K+1]
  ad::Var box_deltas;    // [R, 4K]
};

// Miniature two-stage detector: conv backbone, RPN over a single feature map,
// RoI-aligned features feeding separate classification and regression heads.
// Parameters live under the prefixes backbone, rpn_head, roi_cls_head and
// roi_reg_head.
class TwoStageDetector {
 public:
  static constexpr const char* kModules[] = {"backbone", "rpn_head", "roi_cls_head", "roi_reg_head"};

  TwoStageDetector(DetectorConfig config, std::uint64_t seed);

  const DetectorConfig& config() const noexcept { return config_; }
  ad::ParameterStore& params() noexcept { return params_; }
  const ad::ParameterStore& params() const noexcept { return params_; }
  const std::vector<Box>& anchors() const noexcept { return anchors_; }

  // Replaces all parameter values (names and shapes must match).
  void load_parameters(const ad::ParameterStore& source);

  ForwardVars forward(ad::Graph& g, const ad::Tensor& image);
  RoiVars roi_heads(ad::Graph& g, ad::Var features, const std::vector<Box>& rois);

  RpnOutput rpn_forward(const ad::Tensor& image);
  RpnOutput rpn_from(const ForwardVars& vars) const;
  // Decoded, clipped, NMS-filtered proposals (at most `top_k`, default
  // config.proposal_top_k), in descending objectness order.
  std::vector<Proposal> propose(const ad::Tensor& image, int top_k = -1);
  std::vector<Proposal> proposals_from(const RpnOutput& rpn, int top_k) const;
  // Proposals with their RoI-stage outputs.
  std::vector<ProposalRecord> analyze(const ad::Tensor& image);
  std::vector<ProposalRecord> roi_head_forward(const ad::Tensor& image, const std::vector<Proposal>& proposals);
  std::vector<Detection> detect(const ad::Tensor& image, double score_thresh = 0.05, double nms_thresh = 0.5);
  std::vector<Detection> detections_from(const std::vector<ProposalRecord>& records, double score_thresh,
                                         double nms_thresh) const;

  // Box the RoI head regresses for `class_label` on a record.
  Box refined_box(const ProposalRecord& record, int class_label) const;

 private:
  ad::Var conv(ad::Graph& g, ad::Var x, const std::string& prefix, int stride, int pad);
  ad::Var fc(ad::Graph& g, ad::Var x, const std::string& prefix);
  void check_image(const ad::Tensor& image) const;

  DetectorConfig config_;
  ad::ParameterStore params_;
  std::vector<Box> anchors_;
};

}  // namespace detguard
