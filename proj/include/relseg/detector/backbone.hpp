#pragma once

#include <array>
#include <vector>

#include "relseg/autograd.hpp"
#include "relseg/image.hpp"
#include "relseg/nn.hpp"

namespace relseg::detector {

inline constexpr std::array<int, 3> kPyramidStrides{4, 8, 16};

// Levels ordered fine to coarse; each is [1, C, size/stride, size/stride].
struct FeaturePyramid {
  std::vector<ag::Var> levels;
  std::array<int, 3> strides = kPyramidStrides;
  int image_height = 0;
  int image_width = 0;

  int channels() const { return levels.empty() ? 0 : levels.front().dim(1); }
};

// Image -> [1,3,H,W] tensor, roughly zero-centred on the slide background.
ag::Var image_tensor(const Image& image);

// Three convolution stages (the first reaching stride 4, then stride 2 each)
// with 1x1 laterals and a nearest-neighbour top-down pathway.
class Backbone {
 public:
  Backbone(nn::ParamStore& store, int channels);

  // Throws ShapeError unless H and W are positive multiples of 16.
  FeaturePyramid operator()(const ag::Var& image) const;

 private:
  nn::Conv2d stem1_, stem2_, stem3_, stage2_, stage3_;
  nn::Conv2d lateral2_, lateral3_, lateral4_;
};

}  // namespace relseg::detector
