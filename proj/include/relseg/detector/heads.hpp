#pragma once

#include "relseg/autograd.hpp"
#include "relseg/detector/boxes.hpp"
#include "relseg/image.hpp"
#include "relseg/nn.hpp"

namespace relseg::detector {

inline constexpr int kMaskSize = 28;
inline constexpr int kAppearanceDim = 128;
inline const DeltaWeights kHeadDeltaWeights{10.0, 10.0, 5.0, 5.0};

struct DetectionOutput {
  ag::Var cls_logits;  // [n, kNumClasses+1], column 0 is background
  ag::Var box_deltas;  // [n, kNumClasses*4], per foreground class
  ag::Var appearance;  // [n, kAppearanceDim], penultimate activations
};

// Pools 14x14 RoI features to 7x7, then two fully connected layers.
class BoxHead {
 public:
  BoxHead(nn::ParamStore& store, int channels);
  DetectionOutput operator()(const ag::Var& roi_features) const;

 private:
  nn::Linear fc1_, fc2_, cls_, bbox_;
};

struct MaskLogits {
  ag::Var logits;         // [n, kNumClasses, 28, 28]
  ag::Var deep_features;  // [n, C, 14, 14], input of the deconvolution
};

class MaskHead {
 public:
  MaskHead(nn::ParamStore& store, int channels);
  MaskLogits operator()(const ag::Var& roi_features) const;

 private:
  nn::Conv2d conv_;
  nn::Deconv2x2 deconv_;
  nn::Conv2d predictor_;
};

// Row-wise softmax of the classifier logits, as plain values.
std::vector<double> class_probabilities(const ag::Var& cls_logits);

}  // namespace relseg::detector
