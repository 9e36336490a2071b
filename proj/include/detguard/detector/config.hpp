#pragma once

#include <array>
#include <vector>

namespace detguard {

struct DetectorConfig {
  int image_size = 64;
  int channels = 3;
  int num_classes = 5;  // foreground classes; logits carry one more for background

  // Backbone: 3x3 convs; the first three downsample by 2.
  std::vector<int> backbone_channels{16, 32, 48, 64};
  int rpn_channels = 64;

  std::vector<double> anchor_scales{16.0, 24.0, 32.0};
  std::vector<double> anchor_ratios{0.75, 1.3333333333333333};  // h / w

  int pre_nms_top_n = 100;
  int train_post_nms_top_n = 32;
  int proposal_top_k = 16;  // proposals kept at inference
  double rpn_nms_iou = 0.7;
  double min_proposal_size = 2.0;

  int roi_pool_size = 4;
  int roi_hidden = 64;

  double rpn_positive_iou = 0.5;
  double rpn_negative_iou = 0.3;
  int rpn_batch = 64;
  double rpn_positive_fraction = 0.5;
  double roi_foreground_iou = 0.5;
  int roi_batch = 32;
  double roi_foreground_fraction = 0.25;
  std::array<double, 4> roi_delta_std{0.1, 0.1, 0.2, 0.2};

  double lambda = 1.0;  // localization-loss weight
  int max_detections = 32;

  int feature_stride() const { return 8; }
  int feature_size() const { return image_size / feature_stride(); }
  int anchors_per_cell() const { return static_cast<int>(anchor_scales.size() * anchor_ratios.size()); }

  // Throws ConfigError when invariants fail.
  void validate() const;
};

struct TrainSchedule {
  int epochs = 14;
  double lr = 0.02;
  double momentum = 0.9;
  int batch = 4;
  std::vector<int> lr_drop_epochs{9, 12};  // lr *= 0.1 at the start of each
  double grad_clip = 10.0;                  // global-norm clip; <= 0 disables
};

}  // namespace detguard
