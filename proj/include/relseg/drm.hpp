#pragma once

#include <array>
#include <span>
#include <vector>

#include "relseg/autograd.hpp"
#include "relseg/image.hpp"
#include "relseg/nn.hpp"

namespace relseg::drm {

struct DrmConfig {
  int top_k = 40;
  int embed_dim = 128;
  int geometry_dim = 64;  // sinusoidal width of the pairwise offset encoding
};

// Sinusoidal encoding of each value into `dim / values.size()` entries
// (alternating sin, cos over geometric frequencies), concatenated.
std::vector<double> sinusoidal_embedding(std::span<const double> values, int dim);

// (dx / w_t, dy / h_t, log(w_o / w_t), log(h_o / h_t)) of `other` seen from `target`.
std::array<double, 4> geometric_offsets(const Box& target, const Box& other);

struct SparseRelation {
  ag::Var attended;  // [n, d], residual output
  ag::Var weights;   // [n, n], rows with exactly min(k, n) non-zeros
  ag::Var logits;    // [n, n], before top-k selection
};

class DuplicateRemovalModule {
 public:
  DuplicateRemovalModule(nn::ParamStore& store, int appearance_dim, DrmConfig config);

  // Per-proposal embedding of the box position and size relative to the image; [n, d].
  ag::Var location_embedding(std::span<const Box> boxes, int image_width, int image_height) const;

  // Relation interaction over appearance + location, attending only to the
  // top-k weights of each row. k < 1 is rejected.
  SparseRelation relate_sparse(const ag::Var& appearance, const ag::Var& location, std::span<const Box> boxes,
                               int k) const;
  // Logits [n, 1] of "this detection is the correct one".
  ag::Var classify_duplicates(const ag::Var& attended) const;

  // Convenience: relate_sparse with the configured k, then classify.
  ag::Var operator()(const ag::Var& appearance, std::span<const Box> boxes, int image_width,
                     int image_height) const;

  const DrmConfig& config() const { return config_; }

 private:
  DrmConfig config_;
  nn::Linear input_, query_, key_, value_, geometry_, classifier_;
};

// Detections of one class entering duplicate removal.
struct DuplicateScoredBatch {
  std::vector<Box> boxes;
  std::vector<double> cls_score;
  std::vector<double> dup_prob;
  std::vector<double> final_score;  // filled by rescore_and_nms
};

// final_score = cls_score * dup_prob, then greedy NMS on final_score.
// Returns surviving indices sorted by final_score, descending.
std::vector<int> rescore_and_nms(DuplicateScoredBatch& batch, double iou_threshold);

// 1 for the prediction with maximum IoU to some ground truth (among
// predictions overlapping it), 0 otherwise. Ties go to the higher cls_score,
// then the lower index.
std::vector<int> duplicate_labels(std::span<const Box> predictions, std::span<const double> cls_score,
                                  std::span<const Box> ground_truth);

}  // namespace relseg::drm
