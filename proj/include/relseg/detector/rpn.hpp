#pragma once

#include <span>
#include <vector>

#include "relseg/autograd.hpp"
#include "relseg/detector/backbone.hpp"
#include "relseg/detector/boxes.hpp"
#include "relseg/nn.hpp"

namespace relseg::detector {

// Anchor sizes are stride * scale on every level (3 scales, aspect 1).
inline constexpr std::array<double, 3> kAnchorScales{2.0, 3.0, 4.0};

// Flat anchor list across levels; within a level ordered (scale, y, x).
std::vector<Box> make_anchors(const FeaturePyramid& pyramid);

struct RpnOutput {
  ag::Var objectness;  // [A] logits, one per anchor
  ag::Var deltas;      // [A*4], anchor-major
  std::vector<Box> anchors;
};

class Rpn {
 public:
  Rpn(nn::ParamStore& store, int channels);
  RpnOutput operator()(const FeaturePyramid& pyramid) const;

 private:
  nn::Conv2d shared_, objectness_, deltas_;
};

struct ProposalConfig {
  int pre_nms_topk = 1000;
  int post_nms_topk = 256;
  double nms_iou = 0.7;
  double min_size = 1.0;
};

struct Proposals {
  std::vector<Box> boxes;
  std::vector<double> objectness;  // sigmoid probabilities
};

// Decodes, clips and NMS-filters anchors. Anchors lying entirely outside the
// image are dropped before ranking.
Proposals select_proposals(std::span<const Box> anchors, std::span<const double> logits,
                           std::span<const double> deltas, int image_width, int image_height,
                           const ProposalConfig& config);

Proposals propose(const RpnOutput& rpn, int image_width, int image_height, const ProposalConfig& config);

inline const DeltaWeights kRpnDeltaWeights{1.0, 1.0, 1.0, 1.0};

}  // namespace relseg::detector
