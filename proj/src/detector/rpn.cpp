#include "relseg/detector/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relseg/error.hpp"

namespace relseg::detector {

namespace {
constexpr int kAnchorsPerCell = static_cast<int>(kAnchorScales.size());
}

std::vector<Box> make_anchors(const FeaturePyramid& pyramid) {
  std::vector<Box> anchors;
  for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
    const int s = pyramid.strides[l];
    const int h = pyramid.levels[l].dim(2), w = pyramid.levels[l].dim(3);
    for (double scale : kAnchorScales) {
      const double half = 0.5 * s * scale;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double cx = (x + 0.5) * s, cy = (y + 0.5) * s;
          anchors.push_back({cx - half, cy - half, cx + half, cy + half});
        }
      }
    }
  }
  return anchors;
}

Rpn::Rpn(nn::ParamStore& store, int channels)
    : shared_(store, "rpn.conv", channels, 32, 3, 1, 1),
      objectness_(store, "rpn.objectness", 32, kAnchorsPerCell, 1, 1, 0, nn::Init::normal(0.01)),
      deltas_(store, "rpn.deltas", 32, 4 * kAnchorsPerCell, 1, 1, 0, nn::Init::normal(0.01)) {}

RpnOutput Rpn::operator()(const FeaturePyramid& pyramid) const {
  std::vector<ag::Var> logits, deltas;
  for (const auto& level : pyramid.levels) {
    const ag::Var t = ag::relu(shared_(level));
    const ag::Var obj = objectness_(t);  // [1,A,H,W] already (a,y,x)-ordered
    logits.push_back(ag::reshape(obj, {static_cast<int>(obj.numel())}));

    const ag::Var d = deltas_(t);  // [1,4A,H,W], channel a*4+k
    const int h = d.dim(2), w = d.dim(3), hw = h * w;
    std::vector<int> perm(d.numel());
    std::size_t at = 0;
    for (int a = 0; a < kAnchorsPerCell; ++a) {
      for (int p = 0; p < hw; ++p) {
        for (int k = 0; k < 4; ++k) perm[at++] = (a * 4 + k) * hw + p;
      }
    }
    deltas.push_back(ag::take(d, perm));
  }
  RpnOutput out;
  out.objectness = ag::concat(logits, 0);
  out.deltas = ag::concat(deltas, 0);
  out.anchors = make_anchors(pyramid);
  return out;
}

Proposals select_proposals(std::span<const Box> anchors, std::span<const double> logits,
                           std::span<const double> deltas, int image_width, int image_height,
                           const ProposalConfig& config) {
  if (logits.size() != anchors.size() || deltas.size() != 4 * anchors.size()) {
    throw ShapeError("select_proposals: anchors, logits and deltas disagree in count");
  }
  std::vector<int> candidates;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Box& a = anchors[i];
    const bool outside = a.x2 <= 0 || a.y2 <= 0 || a.x1 >= image_width || a.y1 >= image_height;
    if (!outside) candidates.push_back(static_cast<int>(i));
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  if (static_cast<int>(candidates.size()) > config.pre_nms_topk) candidates.resize(config.pre_nms_topk);

  std::vector<Box> boxes;
  std::vector<double> scores;
  for (int i : candidates) {
    const Box b = clip_box(decode_delta(anchors[i], deltas.subspan(4 * i, 4), kRpnDeltaWeights), image_width,
                           image_height);
    if (b.width() < config.min_size || b.height() < config.min_size) continue;
    boxes.push_back(b);
    scores.push_back(1.0 / (1.0 + std::exp(-logits[i])));
  }
  Proposals out;
  for (int k : nms(boxes, scores, config.nms_iou)) {
    if (static_cast<int>(out.boxes.size()) >= config.post_nms_topk) break;
    out.boxes.push_back(boxes[k]);
    out.objectness.push_back(scores[k]);
  }
  return out;
}

Proposals propose(const RpnOutput& rpn, int image_width, int image_height, const ProposalConfig& config) {
  return select_proposals(rpn.anchors, rpn.objectness.data(), rpn.deltas.data(), image_width, image_height, config);
}

}  // namespace relseg::detector
