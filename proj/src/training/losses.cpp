#include "relseg/training/losses.hpp"

#include <cmath>

#include "relseg/error.hpp"
#include "relseg/image.hpp"

namespace relseg::training {

namespace {

ag::Var or_zero(const ag::Var& v) { return v.defined() ? v : ag::Var::scalar(0.0); }

void check_finite(const char* name, const ag::Var& v) {
  const double x = v.item();
  if (!std::isfinite(x)) throw NumericError(name, x);
}

}  // namespace

WeightedLoss total_loss(const LossTerms& t, double alpha, double beta) {
  const ag::Var cls = or_zero(t.l_cls), reg = or_zero(t.l_reg), seg = or_zero(t.l_seg);
  const ag::Var drm = or_zero(t.l_drm), irm = or_zero(t.l_irm);
  check_finite("l_cls", cls);
  check_finite("l_reg", reg);
  check_finite("l_seg", seg);
  check_finite("l_drm", drm);
  check_finite("l_irm", irm);
  const ag::Var base = ag::add(ag::add(cls, reg), seg);
  const ag::Var total = ag::add(base, ag::add(ag::scale(drm, alpha), ag::scale(irm, beta)));
  check_finite("total", total);
  return {total, {cls.item(), reg.item(), seg.item(), drm.item(), irm.item(), alpha, beta, total.item()}};
}

WeightedLoss baseline_loss(const LossTerms& t) {
  const ag::Var cls = or_zero(t.l_cls), reg = or_zero(t.l_reg), seg = or_zero(t.l_seg);
  check_finite("l_cls", cls);
  check_finite("l_reg", reg);
  check_finite("l_seg", seg);
  const ag::Var total = ag::add(ag::add(cls, reg), seg);
  return {total, {cls.item(), reg.item(), seg.item(), 0.0, 0.0, 0.0, 0.0, total.item()}};
}

nlohmann::json to_json(const LossReport& r) {
  return {{"l_cls", r.l_cls}, {"l_reg", r.l_reg}, {"l_seg", r.l_seg}, {"l_drm", r.l_drm},
          {"l_irm", r.l_irm}, {"alpha", r.alpha}, {"beta", r.beta},   {"total", r.total}};
}

ag::Var classification_loss(const ag::Var& logits, std::span<const int> labels) {
  return ag::softmax_cross_entropy(logits, labels);
}

ag::Var box_regression_loss(const ag::Var& deltas, std::span<const int> labels, std::span<const double> targets) {
  const int n = deltas.dim(0);
  if (static_cast<int>(labels.size()) != n || static_cast<int>(targets.size()) != 4 * n) {
    throw ShapeError("box_regression_loss: label/target count mismatch");
  }
  std::vector<int> index;
  std::vector<double> tgt;
  const int width = deltas.dim(1);
  for (int i = 0; i < n; ++i) {
    if (labels[i] <= 0) continue;
    for (int k = 0; k < 4; ++k) {
      index.push_back(i * width + (labels[i] - 1) * 4 + k);
      tgt.push_back(targets[4 * i + k]);
    }
  }
  if (index.empty()) return ag::Var::scalar(0.0);
  return ag::smooth_l1(ag::take(deltas, index), tgt, kSmoothL1Beta, std::max(1, n));
}

ag::Var mask_loss(const ag::Var& logits, std::span<const int> classes, std::span<const double> targets) {
  const int n = logits.dim(0);
  if (n == 0) return ag::Var::scalar(0.0);
  if (static_cast<int>(classes.size()) != n) throw ShapeError("mask_loss: one class per row required");
  return ag::bce_with_logits(ag::gather_channel(logits, classes), targets);
}

ag::Var duplicate_loss(const ag::Var& logits, std::span<const int> labels) {
  if (logits.numel() == 0) return ag::Var::scalar(0.0);
  std::vector<double> t(labels.begin(), labels.end());
  return ag::bce_with_logits(logits, t);
}

}  // namespace relseg::training
