#include "relseg/training/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relseg/detector/boxes.hpp"
#include "relseg/detector/roi_align.hpp"
#include "relseg/error.hpp"

namespace relseg::training {

using detector::kMaskSize;

std::array<ClassCandidates, kNumClasses> build_candidates(std::span<const Box> proposals,
                                                          std::span<const double> probs,
                                                          std::span<const double> deltas, int image_width,
                                                          int image_height, double score_thresh,
                                                          int max_per_class) {
  std::array<ClassCandidates, kNumClasses> out;
  const std::size_t n = proposals.size();
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<int> order;
    for (std::size_t i = 0; i < n; ++i) {
      if (probs[i * (kNumClasses + 1) + c + 1] > score_thresh) order.push_back(static_cast<int>(i));
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return probs[a * (kNumClasses + 1) + c + 1] > probs[b * (kNumClasses + 1) + c + 1];
    });
    ClassCandidates& cc = out[c];
    for (int i : order) {
      if (static_cast<int>(cc.rows.size()) >= max_per_class) break;
      const Box b = detector::clip_box(
          detector::decode_delta(proposals[i], deltas.subspan(i * 4 * kNumClasses + 4 * c, 4),
                                 detector::kHeadDeltaWeights),
          image_width, image_height);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      cc.rows.push_back(i);
      cc.boxes.push_back(b);
      cc.scores.push_back(probs[i * (kNumClasses + 1) + c + 1]);
    }
  }
  return out;
}

Mask paste_mask(std::span<const double> probs, int size, const Box& box, int image_height, int image_width,
                double threshold) {
  Mask m(image_height, image_width);
  const double bw = box.width(), bh = box.height();
  if (bw <= 0 || bh <= 0) return m;
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int y1 = std::min(image_height, static_cast<int>(std::ceil(box.y2)));
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int x1 = std::min(image_width, static_cast<int>(std::ceil(box.x2)));
  auto at = [&](int r, int c) { return probs[static_cast<std::size_t>(r) * size + c]; };
  for (int y = y0; y < y1; ++y) {
    const double py = y + 0.5;
    if (py < box.y1 || py >= box.y2) continue;
    const double v = std::clamp((py - box.y1) / bh * size - 0.5, 0.0, size - 1.0);
    const int r0 = std::min(static_cast<int>(v), size - 1), r1 = std::min(r0 + 1, size - 1);
    const double fy = v - r0;
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5;
      if (px < box.x1 || px >= box.x2) continue;
      const double u = std::clamp((px - box.x1) / bw * size - 0.5, 0.0, size - 1.0);
      const int c0 = std::min(static_cast<int>(u), size - 1), c1 = std::min(c0 + 1, size - 1);
      const double fx = u - c0;
      const double p = (1 - fy) * ((1 - fx) * at(r0, c0) + fx * at(r0, c1)) +
                       fy * ((1 - fx) * at(r1, c0) + fx * at(r1, c1));
      if (p >= threshold) m.at(y, x) = 1;
    }
  }
  return m;
}

struct Model::DetectorPass {
  detector::FeaturePyramid pyramid;
  detector::Proposals proposals;
  RoiTargets rois;
  ag::Var l_cls, l_reg, l_seg;
  detector::MaskLogits fg_masks;  // undefined when no foreground RoI
  std::vector<int> fg_classes;
  std::vector<double> fg_mask_targets;
};

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      store_(seed),
      backbone_(store_, config.channels),
      rpn_(store_, config.channels),
      box_head_(store_, config.channels),
      mask_head_(store_, config.channels) {
  if (config_.irm_enabled) {
    irm_ = std::make_unique<irm::InstanceRelationModule>(store_, config.channels, config.irm_flags,
                                                         config.irm_gamma_init);
  }
  if (config_.drm_enabled) {
    drm_ = std::make_unique<drm::DuplicateRemovalModule>(store_, detector::kAppearanceDim, config.drm);
  }
}

Model::DetectorPass Model::detector_pass(const SampleRecord& sample, std::mt19937_64& rng) const {
  DetectorPass pass;
  const int W = sample.image.width, H = sample.image.height;
  pass.pyramid = backbone_(detector::image_tensor(sample.image));
  const detector::RpnOutput rpn = rpn_(pass.pyramid);

  std::vector<Box> gt_boxes;
  for (const auto& inst : sample.instances) gt_boxes.push_back(inst.box);
  const RpnTargets rt = assign_rpn_targets(rpn.anchors, gt_boxes, W, H, config_.rpn_sampling, rng);
  const ag::Var rpn_cls = ag::bce_with_logits(ag::take(rpn.objectness, rt.sampled), rt.labels);
  ag::Var rpn_reg = ag::Var::scalar(0.0);
  if (!rt.positives.empty()) {
    std::vector<int> idx;
    for (int a : rt.positives) {
      for (int k = 0; k < 4; ++k) idx.push_back(4 * a + k);
    }
    rpn_reg = ag::smooth_l1(ag::take(rpn.deltas, idx), rt.deltas, kSmoothL1Beta,
                            static_cast<double>(rt.sampled.size()));
  }

  pass.proposals = detector::propose(rpn, W, H, config_.train_proposals);
  pass.rois = sample_rois(pass.proposals.boxes, sample.instances, config_.roi_sampling, rng);
  const ag::Var features = detector::roi_align(pass.pyramid, pass.rois.boxes);
  const detector::DetectionOutput det = box_head_(features);
  pass.l_cls = ag::add(rpn_cls, classification_loss(det.cls_logits, pass.rois.labels));
  pass.l_reg = ag::add(rpn_reg, box_regression_loss(det.box_deltas, pass.rois.labels, pass.rois.deltas));

  const int nfg = pass.rois.num_foreground;
  if (nfg == 0) {
    pass.l_seg = ag::Var::scalar(0.0);
    return pass;
  }
  std::vector<int> fg(nfg);
  std::iota(fg.begin(), fg.end(), 0);
  pass.fg_masks = mask_head_(ag::index_rows(features, fg));
  for (int i = 0; i < nfg; ++i) {
    pass.fg_classes.push_back(pass.rois.labels[i] - 1);
    const auto t = mask_target(sample.instances[pass.rois.matched_gt[i]].mask, pass.rois.boxes[i], kMaskSize);
    pass.fg_mask_targets.insert(pass.fg_mask_targets.end(), t.begin(), t.end());
  }
  pass.l_seg = mask_loss(pass.fg_masks.logits, pass.fg_classes, pass.fg_mask_targets);
  return pass;
}

ag::Var Model::relation_loss(const DetectorPass& pass) const {
  if (!irm_ || pass.fg_classes.empty()) return ag::Var::scalar(0.0);
  const ag::Var probs = ag::sigmoid(ag::gather_channel(pass.fg_masks.logits, pass.fg_classes));
  const ag::Var refined = (*irm_)(pass.fg_masks.deep_features, ag::avg_pool2x2(probs));
  return mask_loss(refined, pass.fg_classes, pass.fg_mask_targets);
}

ag::Var Model::duplicate_removal_loss(const DetectorPass& pass, const SampleRecord& sample) const {
  if (!drm_ || pass.proposals.boxes.empty()) return ag::Var::scalar(0.0);
  const int W = sample.image.width, H = sample.image.height;
  ag::Var appearance;
  std::vector<double> probs, deltas;
  {
    ag::NoGradGuard guard;
    const detector::DetectionOutput det = box_head_(detector::roi_align(pass.pyramid, pass.proposals.boxes));
    appearance = det.appearance.detach();
    probs = detector::class_probabilities(det.cls_logits);
    deltas.assign(det.box_deltas.data().begin(), det.box_deltas.data().end());
  }
  const auto candidates = build_candidates(pass.proposals.boxes, probs, deltas, W, H, config_.score_thresh,
                                           config_.candidates_per_class);
  std::vector<ag::Var> logits;
  std::vector<int> labels;
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassCandidates& cc = candidates[c];
    if (cc.rows.empty()) continue;
    std::vector<Box> gt;
    for (const auto& inst : sample.instances) {
      if (static_cast<int>(inst.cls) == c) gt.push_back(inst.box);
    }
    const auto l = drm::duplicate_labels(cc.boxes, cc.scores, gt);
    labels.insert(labels.end(), l.begin(), l.end());
    logits.push_back((*drm_)(ag::index_rows(appearance, cc.rows), cc.boxes, W, H));
  }
  if (logits.empty()) return ag::Var::scalar(0.0);
  return duplicate_loss(logits.size() == 1 ? logits.front() : ag::concat(logits, 0), labels);
}

namespace {

LossTerms mean_terms(const std::vector<LossTerms>& per_image) {
  const double inv = 1.0 / static_cast<double>(per_image.size());
  auto avg = [&](ag::Var LossTerms::*field) {
    std::vector<ag::Var> parts;
    for (const auto& t : per_image) parts.push_back(t.*field);
    return ag::scale(parts.size() == 1 ? parts.front() : ag::add_n(parts), inv);
  };
  LossTerms out;
  out.l_cls = avg(&LossTerms::l_cls);
  out.l_reg = avg(&LossTerms::l_reg);
  out.l_seg = avg(&LossTerms::l_seg);
  if (per_image.front().l_drm.defined()) out.l_drm = avg(&LossTerms::l_drm);
  if (per_image.front().l_irm.defined()) out.l_irm = avg(&LossTerms::l_irm);
  return out;
}

void check_batch(std::span<const SampleRecord* const> batch, std::span<std::mt19937_64> rngs) {
  if (batch.empty()) throw Error("empty training batch");
  if (rngs.size() != batch.size()) throw Error("one sampling stream per image required");
}

}  // namespace

LossTerms Model::losses(std::span<const SampleRecord* const> batch, std::span<std::mt19937_64> rngs) const {
  check_batch(batch, rngs);
  std::vector<LossTerms> per_image;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const DetectorPass pass = detector_pass(*batch[b], rngs[b]);
    LossTerms t{pass.l_cls, pass.l_reg, pass.l_seg, {}, {}};
    t.l_drm = duplicate_removal_loss(pass, *batch[b]);
    t.l_irm = relation_loss(pass);
    per_image.push_back(std::move(t));
  }
  return mean_terms(per_image);
}

LossTerms Model::baseline_losses(std::span<const SampleRecord* const> batch, std::span<std::mt19937_64> rngs) const {
  check_batch(batch, rngs);
  std::vector<LossTerms> per_image;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const DetectorPass pass = detector_pass(*batch[b], rngs[b]);
    per_image.push_back({pass.l_cls, pass.l_reg, pass.l_seg, {}, {}});
  }
  return mean_terms(per_image);
}

std::vector<Instance> Model::predict(const Image& image, double output_score_thresh) const {
  ag::NoGradGuard guard;
  const int W = image.width, H = image.height;
  const detector::FeaturePyramid pyramid = backbone_(detector::image_tensor(image));
  const detector::Proposals proposals = detector::propose(rpn_(pyramid), W, H, config_.test_proposals);
  if (proposals.boxes.empty()) return {};

  const detector::DetectionOutput det = box_head_(detector::roi_align(pyramid, proposals.boxes));
  const std::vector<double> probs = detector::class_probabilities(det.cls_logits);
  const auto candidates = build_candidates(proposals.boxes, probs, det.box_deltas.data(), W, H,
                                           config_.score_thresh, config_.candidates_per_class);

  struct Detection {
    Box box;
    int cls;
    double score;
  };
  std::vector<Detection> dets;
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassCandidates& cc = candidates[c];
    if (cc.rows.empty()) continue;
    drm::DuplicateScoredBatch batch{cc.boxes, cc.scores, std::vector<double>(cc.rows.size(), 1.0), {}};
    if (drm_) {
      const ag::Var logits = (*drm_)(ag::index_rows(det.appearance, cc.rows), cc.boxes, W, H);
      const ag::Var p = ag::sigmoid(logits);
      batch.dup_prob.assign(p.data().begin(), p.data().end());
    }
    for (int k : drm::rescore_and_nms(batch, config_.nms_iou)) {
      dets.push_back({batch.boxes[k], c, batch.final_score[k]});
    }
  }
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::erase_if(dets, [&](const Detection& d) { return d.score < output_score_thresh; });
  if (static_cast<int>(dets.size()) > config_.detections_per_image) dets.resize(config_.detections_per_image);
  if (dets.empty()) return {};

  std::vector<Box> boxes;
  std::vector<int> classes;
  for (const auto& d : dets) {
    boxes.push_back(d.box);
    classes.push_back(d.cls);
  }
  const detector::MaskLogits masks = mask_head_(detector::roi_align(pyramid, boxes));
  ag::Var logits = masks.logits;
  if (irm_) {
    const ag::Var base = ag::sigmoid(ag::gather_channel(masks.logits, classes));
    logits = (*irm_)(masks.deep_features, ag::avg_pool2x2(base));
  }
  const ag::Var mask_probs = ag::sigmoid(ag::gather_channel(logits, classes));
  const std::size_t plane = static_cast<std::size_t>(kMaskSize) * kMaskSize;

  std::vector<Instance> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    Mask m = paste_mask(mask_probs.data().subspan(i * plane, plane), kMaskSize, dets[i].box, H, W,
                        config_.mask_thresh);
    const auto tight = m.tight_box();
    if (!tight) continue;
    out.push_back({static_cast<CellClass>(dets[i].cls), std::move(m), *tight, dets[i].score});
  }
  return out;
}

}  // namespace relseg::training
