#include "relseg/detector/heads.hpp"

#include "relseg/detector/roi_align.hpp"
#include "relseg/error.hpp"

namespace relseg::detector {

BoxHead::BoxHead(nn::ParamStore& store, int channels)
    : fc1_(store, "box_head.fc1", channels * 7 * 7, kAppearanceDim),
      fc2_(store, "box_head.fc2", kAppearanceDim, kAppearanceDim),
      cls_(store, "box_head.cls", kAppearanceDim, kNumClasses + 1, nn::Init::normal(0.01)),
      bbox_(store, "box_head.bbox", kAppearanceDim, kNumClasses * 4, nn::Init::normal(0.001)) {}

DetectionOutput BoxHead::operator()(const ag::Var& roi) const {
  if (roi.rank() != 4 || roi.dim(2) != kRoiSize || roi.dim(3) != kRoiSize) {
    throw ShapeError("box head: expected [n,C,14,14] features, got " + ag::to_string(roi.shape()));
  }
  const int n = roi.dim(0);
  const ag::Var pooled = ag::reshape(ag::avg_pool2x2(roi), {n, roi.dim(1) * 49});
  const ag::Var h = ag::relu(fc2_(ag::relu(fc1_(pooled))));
  return {cls_(h), bbox_(h), h};
}

MaskHead::MaskHead(nn::ParamStore& store, int channels)
    : conv_(store, "mask_head.conv", channels, channels, 3, 1, 1),
      deconv_(store, "mask_head.deconv", channels, 32),
      predictor_(store, "mask_head.predictor", 32, kNumClasses, 1, 1, 0, nn::Init::normal(0.001)) {}

MaskLogits MaskHead::operator()(const ag::Var& roi) const {
  if (roi.rank() != 4 || roi.dim(2) != kRoiSize || roi.dim(3) != kRoiSize) {
    throw ShapeError("mask head: expected [n,C,14,14] features, got " + ag::to_string(roi.shape()));
  }
  const ag::Var deep = ag::relu(conv_(roi));
  return {predictor_(ag::relu(deconv_(deep))), deep};
}

std::vector<double> class_probabilities(const ag::Var& cls_logits) {
  if (cls_logits.numel() == 0) return {};
  ag::NoGradGuard guard;
  const auto p = ag::row_softmax(cls_logits);
  return {p.data().begin(), p.data().end()};
}

}  // namespace relseg::detector
