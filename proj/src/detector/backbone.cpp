#include "relseg/detector/backbone.hpp"

#include <string>

#include "relseg/error.hpp"

namespace relseg::detector {

ag::Var image_tensor(const Image& image) {
  std::vector<double> v(static_cast<std::size_t>(3) * image.height * image.width);
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        v[c * plane + static_cast<std::size_t>(y) * image.width + x] = (image.value(y, x, c) - 0.8) / 0.2;
      }
    }
  }
  return ag::Var::constant({1, 3, image.height, image.width}, std::move(v));
}

Backbone::Backbone(nn::ParamStore& store, int channels)
    : stem1_(store, "backbone.stem1", 3, 16, 3, 2, 1),
      stem2_(store, "backbone.stem2", 16, 32, 3, 2, 1),
      stem3_(store, "backbone.stem3", 32, 32, 3, 1, 1),
      stage2_(store, "backbone.stage2", 32, 64, 3, 2, 1),
      stage3_(store, "backbone.stage3", 64, 64, 3, 2, 1),
      lateral2_(store, "backbone.lateral2", 32, channels, 1, 1, 0),
      lateral3_(store, "backbone.lateral3", 64, channels, 1, 1, 0),
      lateral4_(store, "backbone.lateral4", 64, channels, 1, 1, 0) {}

FeaturePyramid Backbone::operator()(const ag::Var& image) const {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("backbone: expected [1,3,H,W] input, got " + ag::to_string(image.shape()));
  }
  const int h = image.dim(2), w = image.dim(3);
  if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0) {
    throw ShapeError("backbone: image size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not a multiple of 16");
  }
  using ag::relu;
  const ag::Var c2 = relu(stem3_(relu(stem2_(relu(stem1_(image))))));
  const ag::Var c3 = relu(stage2_(c2));
  const ag::Var c4 = relu(stage3_(c3));

  const ag::Var p4 = lateral4_(c4);
  const ag::Var p3 = ag::add(lateral3_(c3), ag::upsample_nearest2x(p4));
  const ag::Var p2 = ag::add(lateral2_(c2), ag::upsample_nearest2x(p3));

  FeaturePyramid out;
  out.levels = {p2, p3, p4};
  out.image_height = h;
  out.image_width = w;
  return out;
}

}  // namespace relseg::detector
