#pragma once

#include <array>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "relseg/detector/backbone.hpp"
#include "relseg/detector/heads.hpp"
#include "relseg/detector/rpn.hpp"
#include "relseg/drm.hpp"
#include "relseg/image.hpp"
#include "relseg/irm.hpp"
#include "relseg/nn.hpp"
#include "relseg/training/losses.hpp"
#include "relseg/training/targets.hpp"

namespace relseg::training {

struct ModelConfig {
  int channels = 64;
  detector::ProposalConfig train_proposals{1000, 256, 0.7, 1.0};
  detector::ProposalConfig test_proposals{1000, 128, 0.7, 1.0};
  RpnSamplingConfig rpn_sampling;
  RoiSamplingConfig roi_sampling;

  bool irm_enabled = true;
  irm::IrmFlags irm_flags;
  double irm_gamma_init = 0.0;

  bool drm_enabled = true;
  drm::DrmConfig drm;

  double score_thresh = 0.05;      // per-class candidate threshold
  int candidates_per_class = 100;  // cap before duplicate removal
  double nms_iou = 0.5;            // final per-class NMS
  int detections_per_image = 100;
  double output_score_thresh = 0.5;  // final score needed to emit an instance
  double mask_thresh = 0.5;
};

// Detections of one class before duplicate removal.
struct ClassCandidates {
  std::vector<int> rows;  // proposal index
  std::vector<Box> boxes;  // class-specific decoded boxes
  std::vector<double> scores;
};

// Per class: proposals whose class probability exceeds `score_thresh`, boxes
// decoded with that class's deltas and clipped, at most `max_per_class` by
// descending score. `probs` is [n, kNumClasses+1], `deltas` [n, 4*kNumClasses].
std::array<ClassCandidates, kNumClasses> build_candidates(std::span<const Box> proposals,
                                                          std::span<const double> probs,
                                                          std::span<const double> deltas, int image_width,
                                                          int image_height, double score_thresh,
                                                          int max_per_class);

// Resamples an S x S probability map into `box` and thresholds it.
Mask paste_mask(std::span<const double> probs, int size, const Box& box, int image_height, int image_width,
                double threshold);

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Mean over the batch of every loss component. `rngs` supplies one
  // sampling stream per image.
  LossTerms losses(std::span<const SampleRecord* const> batch, std::span<std::mt19937_64> rngs) const;

  // Plain two-stage detector losses; never touches the relation modules.
  LossTerms baseline_losses(std::span<const SampleRecord* const> batch, std::span<std::mt19937_64> rngs) const;

  std::vector<Instance> predict(const Image& image) const { return predict(image, config_.output_score_thresh); }
  // Same pipeline with a different final-score cut.
  std::vector<Instance> predict(const Image& image, double output_score_thresh) const;
  void set_output_score_thresh(double t) { config_.output_score_thresh = t; }

  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const ModelConfig& config() const { return config_; }
  const irm::InstanceRelationModule* irm_module() const { return irm_.get(); }
  const drm::DuplicateRemovalModule* drm_module() const { return drm_.get(); }

 private:
  struct DetectorPass;
  DetectorPass detector_pass(const SampleRecord& sample, std::mt19937_64& rng) const;
  ag::Var relation_loss(const DetectorPass& pass) const;
  ag::Var duplicate_removal_loss(const DetectorPass& pass, const SampleRecord& sample) const;

  ModelConfig config_;
  nn::ParamStore store_;
  detector::Backbone backbone_;
  detector::Rpn rpn_;
  detector::BoxHead box_head_;
  detector::MaskHead mask_head_;
  std::unique_ptr<irm::InstanceRelationModule> irm_;
  std::unique_ptr<drm::DuplicateRemovalModule> drm_;
};

}  // namespace relseg::training
