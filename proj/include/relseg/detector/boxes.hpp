#pragma once

#include <array>
#include <span>
#include <vector>

#include "relseg/image.hpp"

namespace relseg::detector {

// Weights applied to (dx, dy, dw, dh) when encoding regression targets.
struct DeltaWeights {
  double wx = 10.0, wy = 10.0, ww = 5.0, wh = 5.0;
};

std::array<double, 4> encode_delta(const Box& reference, const Box& target, const DeltaWeights& w);
Box decode_delta(const Box& reference, std::span<const double> delta, const DeltaWeights& w);
Box clip_box(const Box& b, int width, int height);

// Greedy non-maximum suppression. Candidates are visited by descending score,
// equal scores by ascending index; returns kept indices in that visiting order.
std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold);

}  // namespace relseg::detector
