#include "relseg/detector/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relseg/error.hpp"

namespace relseg::detector {

namespace {
// Keeps exp() bounded for wild early-training deltas.
const double kMaxLogScale = std::log(1000.0 / 16.0);
}  // namespace

std::array<double, 4> encode_delta(const Box& ref, const Box& tgt, const DeltaWeights& w) {
  const double rw = ref.width(), rh = ref.height();
  const double rcx = ref.x1 + 0.5 * rw, rcy = ref.y1 + 0.5 * rh;
  const double tw = tgt.width(), th = tgt.height();
  const double tcx = tgt.x1 + 0.5 * tw, tcy = tgt.y1 + 0.5 * th;
  return {w.wx * (tcx - rcx) / rw, w.wy * (tcy - rcy) / rh, w.ww * std::log(tw / rw), w.wh * std::log(th / rh)};
}

Box decode_delta(const Box& ref, std::span<const double> d, const DeltaWeights& w) {
  const double rw = ref.width(), rh = ref.height();
  const double rcx = ref.x1 + 0.5 * rw, rcy = ref.y1 + 0.5 * rh;
  const double cx = rcx + d[0] / w.wx * rw;
  const double cy = rcy + d[1] / w.wy * rh;
  const double bw = rw * std::exp(std::min(d[2] / w.ww, kMaxLogScale));
  const double bh = rh * std::exp(std::min(d[3] / w.wh, kMaxLogScale));
  return {cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh};
}

Box clip_box(const Box& b, int width, int height) {
  return {std::clamp(b.x1, 0.0, double(width)), std::clamp(b.y1, 0.0, double(height)),
          std::clamp(b.x2, 0.0, double(width)), std::clamp(b.y2, 0.0, double(height))};
}

std::vector<int> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold) {
  if (boxes.size() != scores.size()) throw ShapeError("nms: box and score counts differ");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<int> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (suppressed[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!suppressed[b] && box_iou(boxes[a], boxes[b]) > iou_threshold) suppressed[b] = 1;
    }
  }
  return keep;
}

}  // namespace relseg::detector
