#pragma once

#include <random>
#include <span>
#include <vector>

#include "relseg/image.hpp"

namespace relseg::training {

struct RpnSamplingConfig {
  int batch_per_image = 256;
  double positive_fraction = 0.5;
  double positive_iou = 0.7;
  double negative_iou = 0.3;
};

// Sampled anchors with binary objectness labels; regression targets for the
// positives (anchor-relative, unit delta weights).
struct RpnTargets {
  std::vector<int> sampled;
  std::vector<double> labels;    // parallel to `sampled`
  std::vector<int> positives;    // subset of `sampled`
  std::vector<double> deltas;    // 4 per positive
};

// Anchors lying entirely outside the image are never sampled. Each ground
// truth's best-matching anchors are positive regardless of the threshold.
RpnTargets assign_rpn_targets(std::span<const Box> anchors, std::span<const Box> gt_boxes, int image_width,
                              int image_height, const RpnSamplingConfig& config, std::mt19937_64& rng);

struct RoiSamplingConfig {
  int batch_per_image = 64;
  double foreground_fraction = 0.25;
  double foreground_iou = 0.5;
};

// Per-proposal detection targets without sampling.
struct DetectionTargets {
  std::vector<int> labels;      // 0 background, 1 + class otherwise
  std::vector<int> matched_gt;  // -1 for background
  std::vector<double> deltas;   // 4 per proposal, zero for background
  std::vector<int> drm_labels;  // 1 correct, 0 duplicate
};

// fg when the best IoU reaches `foreground_iou` (ties to the lower GT index);
// DRM labels from drm::duplicate_labels, with `scores` breaking IoU ties
// (all equal when empty).
DetectionTargets assign_targets(std::span<const Box> proposals, std::span<const Instance> ground_truth,
                                double foreground_iou = 0.5, std::span<const double> scores = {});

struct RoiTargets {
  std::vector<Box> boxes;
  std::vector<int> labels;
  std::vector<int> matched_gt;
  std::vector<double> deltas;  // 4 per RoI
  int num_foreground = 0;      // foreground RoIs come first
};

// Appends the ground-truth boxes to the proposals, then samples up to
// batch_per_image RoIs with at most foreground_fraction foreground.
RoiTargets sample_rois(std::span<const Box> proposals, std::span<const Instance> ground_truth,
                       const RoiSamplingConfig& config, std::mt19937_64& rng);

// size x size binary target: the instance's full mask resampled into `roi`.
std::vector<double> mask_target(const Mask& mask, const Box& roi, int size);

}  // namespace relseg::training
