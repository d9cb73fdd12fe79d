#include "relseg/training/targets.hpp"

#include <algorithm>
#include <cmath>

#include "relseg/detector/boxes.hpp"
#include "relseg/detector/heads.hpp"
#include "relseg/detector/rpn.hpp"
#include "relseg/drm.hpp"

namespace relseg::training {

namespace {

std::vector<int> take_random(std::vector<int> pool, std::size_t count, std::mt19937_64& rng) {
  if (pool.size() > count) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(count);
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

RpnTargets assign_rpn_targets(std::span<const Box> anchors, std::span<const Box> gt_boxes, int image_width,
                              int image_height, const RpnSamplingConfig& config, std::mt19937_64& rng) {
  const std::size_t n = anchors.size(), g = gt_boxes.size();
  std::vector<char> inside(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Box& a = anchors[i];
    inside[i] = !(a.x2 <= 0 || a.y2 <= 0 || a.x1 >= image_width || a.y1 >= image_height);
  }
  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(g, 0.0);
  std::vector<double> iou(n * g, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!inside[i]) continue;
    for (std::size_t j = 0; j < g; ++j) {
      const double v = box_iou(anchors[i], gt_boxes[j]);
      iou[i * g + j] = v;
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = static_cast<int>(j);
      }
      gt_best[j] = std::max(gt_best[j], v);
    }
  }
  // -1 ignore, 0 negative, 1 positive
  std::vector<int> label(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!inside[i]) continue;
    if (best_iou[i] < config.negative_iou) label[i] = 0;
    if (best_iou[i] >= config.positive_iou) label[i] = 1;
  }
  for (std::size_t j = 0; j < g; ++j) {
    if (gt_best[j] <= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (inside[i] && iou[i * g + j] == gt_best[j]) {
        label[i] = 1;
        best_gt[i] = static_cast<int>(j);
      }
    }
  }
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == 1) pos.push_back(static_cast<int>(i));
    if (label[i] == 0) neg.push_back(static_cast<int>(i));
  }
  const auto max_pos = static_cast<std::size_t>(config.batch_per_image * config.positive_fraction);
  pos = take_random(std::move(pos), max_pos, rng);
  neg = take_random(std::move(neg), config.batch_per_image - pos.size(), rng);

  RpnTargets t;
  t.positives = pos;
  for (int i : pos) {
    const auto d = detector::encode_delta(anchors[i], gt_boxes[best_gt[i]], detector::kRpnDeltaWeights);
    t.deltas.insert(t.deltas.end(), d.begin(), d.end());
  }
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(t.sampled));
  for (int i : t.sampled) t.labels.push_back(label[i] == 1 ? 1.0 : 0.0);
  return t;
}

DetectionTargets assign_targets(std::span<const Box> proposals, std::span<const Instance> ground_truth,
                                double foreground_iou, std::span<const double> scores) {
  const std::size_t n = proposals.size();
  DetectionTargets t;
  t.labels.assign(n, 0);
  t.matched_gt.assign(n, -1);
  t.deltas.assign(4 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t j = 0; j < ground_truth.size(); ++j) {
      const double v = box_iou(proposals[i], ground_truth[j].box);
      if (v > best) {
        best = v;
        arg = static_cast<int>(j);
      }
    }
    if (arg >= 0 && best >= foreground_iou) {
      const Instance& gt = ground_truth[arg];
      t.labels[i] = static_cast<int>(gt.cls) + 1;
      t.matched_gt[i] = arg;
      const auto d = detector::encode_delta(proposals[i], gt.box, detector::kHeadDeltaWeights);
      std::copy(d.begin(), d.end(), t.deltas.begin() + 4 * i);
    }
  }
  std::vector<double> tie(n, 0.0);
  if (scores.size() == n) tie.assign(scores.begin(), scores.end());
  std::vector<Box> gt_boxes;
  for (const auto& inst : ground_truth) gt_boxes.push_back(inst.box);
  t.drm_labels = drm::duplicate_labels(proposals, tie, gt_boxes);
  return t;
}

RoiTargets sample_rois(std::span<const Box> proposals, std::span<const Instance> ground_truth,
                       const RoiSamplingConfig& config, std::mt19937_64& rng) {
  std::vector<Box> all(proposals.begin(), proposals.end());
  for (const auto& inst : ground_truth) all.push_back(inst.box);
  const DetectionTargets dt = assign_targets(all, ground_truth, config.foreground_iou);

  std::vector<int> fg, bg;
  for (std::size_t i = 0; i < all.size(); ++i) (dt.labels[i] > 0 ? fg : bg).push_back(static_cast<int>(i));
  const auto max_fg = static_cast<std::size_t>(config.batch_per_image * config.foreground_fraction);
  fg = take_random(std::move(fg), max_fg, rng);
  bg = take_random(std::move(bg), config.batch_per_image - fg.size(), rng);

  RoiTargets t;
  t.num_foreground = static_cast<int>(fg.size());
  for (const auto* group : {&fg, &bg}) {
    for (int i : *group) {
      t.boxes.push_back(all[i]);
      t.labels.push_back(dt.labels[i]);
      t.matched_gt.push_back(dt.matched_gt[i]);
      t.deltas.insert(t.deltas.end(), dt.deltas.begin() + 4 * i, dt.deltas.begin() + 4 * i + 4);
    }
  }
  return t;
}

std::vector<double> mask_target(const Mask& mask, const Box& roi, int size) {
  std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
  const double bw = roi.width() / size, bh = roi.height() / size;
  // Average of 2x2 point samples per cell, thresholded at one half.
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const int y = static_cast<int>(std::floor(roi.y1 + (r + (sy + 0.5) / 2.0) * bh));
          const int x = static_cast<int>(std::floor(roi.x1 + (c + (sx + 0.5) / 2.0) * bw));
          if (y >= 0 && y < mask.height && x >= 0 && x < mask.width && mask.at(y, x)) ++hits;
        }
      }
      out[static_cast<std::size_t>(r) * size + c] = hits >= 2 ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace relseg::training
