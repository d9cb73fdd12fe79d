#pragma once

#include <span>

#include "relseg/autograd.hpp"
#include "relseg/detector/backbone.hpp"

namespace relseg::detector {

inline constexpr int kRoiSize = 14;

// Coarsest pyramid level whose stride is at most sqrt(area)/kRoiSize; the
// finest level when no level qualifies.
std::size_t assign_level(const Box& box, std::span<const int> strides);

// Bilinear RoIAlign (half-pixel aligned, 2x2 samples per bin) on a single
// [1,C,H,W] feature map. Returns [n,C,out,out]. Throws DegenerateBoxError for
// boxes with area below one pixel.
ag::Var roi_align_level(const ag::Var& feature, int stride, std::span<const Box> boxes, int output_size = kRoiSize,
                        int sampling_ratio = 2);

// Multi-level variant: each box reads from its assigned pyramid level.
ag::Var roi_align(const FeaturePyramid& pyramid, std::span<const Box> boxes, int output_size = kRoiSize,
                  int sampling_ratio = 2);

}  // namespace relseg::detector
