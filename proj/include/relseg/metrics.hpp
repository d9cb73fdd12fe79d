#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "relseg/image.hpp"

namespace relseg::metrics {

struct Match {
  int gt = 0;
  int pred = 0;
  double iou = 0.0;
};

struct AjiResult {
  double aji = 0.0;
  std::size_t intersection = 0;  // aggregated numerator
  std::size_t union_area = 0;    // aggregated denominator, unmatched areas included
  std::vector<Match> matches;    // one per ground truth
  std::vector<int> unmatched_pred;
};

// Aggregated Jaccard Index over possibly overlapping masks. Each ground truth
// pairs with its highest-IoU prediction (lowest index on ties); predictions
// never selected add their area to the denominator. A prediction selected by
// several ground truths is counted once per selection. Conventions: both sets
// empty -> 1; empty ground truth with predictions -> 0.
AjiResult compute_aji(std::span<const Mask> gt, std::span<const Mask> pred);

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int true_positives = 0;
  std::vector<Match> matches;
};

// Greedy one-to-one matching by descending prediction score (ties by lower
// index); a prediction claims the free ground truth of highest mask IoU if
// that IoU reaches `iou_threshold`. Both sets empty -> 1, exactly one -> 0.
F1Result compute_f1(std::span<const Mask> gt, std::span<const Mask> pred, std::span<const double> scores,
                    double iou_threshold = 0.5);

struct ClassScores {
  double aji = 0.0;  // mean of per-image AJI
  double f1 = 0.0;   // from true/false positive counts pooled over images
  double precision = 0.0;
  double recall = 0.0;
};

struct ImageBreakdown {
  std::string id;
  std::map<std::string, AjiResult> aji;
  std::map<std::string, F1Result> f1;
};

struct EvalReport {
  std::map<std::string, ClassScores> per_class;  // keyed by class name
  double mean_aji = 0.0;
  double mean_f1 = 0.0;
  std::vector<ImageBreakdown> per_image;
};

// Pairs ground-truth and prediction samples by id. Throws Error if an id is
// missing from the predictions.
EvalReport evaluate(const std::vector<SampleRecord>& ground_truth, const std::vector<SampleRecord>& predictions,
                    double f1_iou_threshold = 0.5);

nlohmann::json to_json(const EvalReport& report, bool include_per_image = true);

}  // namespace relseg::metrics
