#pragma once

#include <span>

#include <json.hpp>

#include "relseg/autograd.hpp"

namespace relseg::training {

// Scalar loss components as graph nodes.
struct LossTerms {
  ag::Var l_cls;
  ag::Var l_reg;
  ag::Var l_seg;
  ag::Var l_drm;
  ag::Var l_irm;
};

struct LossReport {
  double l_cls = 0, l_reg = 0, l_seg = 0, l_drm = 0, l_irm = 0;
  double alpha = 1.0, beta = 1.0;
  double total = 0;
};

struct WeightedLoss {
  ag::Var total;
  LossReport report;
};

// total = l_cls + l_reg + l_seg + alpha * l_drm + beta * l_irm. Undefined
// terms count as zero. Throws NumericError naming the first non-finite
// component.
WeightedLoss total_loss(const LossTerms& terms, double alpha, double beta);

// Sum of the detector terms only (l_cls + l_reg + l_seg).
WeightedLoss baseline_loss(const LossTerms& terms);

nlohmann::json to_json(const LossReport& r);

// ---- per-head losses ------------------------------------------------------

// Cross-entropy over [n, K] logits.
ag::Var classification_loss(const ag::Var& logits, std::span<const int> labels);

// Smooth-L1 (beta 1/9) on the class-specific deltas of foreground rows,
// normalized by the total row count. `deltas` is [n, 4*kNumClasses] and
// labels are 0 for background or 1+class.
ag::Var box_regression_loss(const ag::Var& deltas, std::span<const int> labels, std::span<const double> targets);

// Pixelwise BCE on the channel of each row's class. `logits` is
// [n, kNumClasses, S, S]; `classes` are 0-based foreground classes and
// `targets` holds n*S*S binary values.
ag::Var mask_loss(const ag::Var& logits, std::span<const int> classes, std::span<const double> targets);

// BCE of correct/duplicate logits [n, 1].
ag::Var duplicate_loss(const ag::Var& logits, std::span<const int> labels);

inline constexpr double kSmoothL1Beta = 1.0 / 9.0;

}  // namespace relseg::training
