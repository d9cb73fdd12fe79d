#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "relseg/image.hpp"

namespace relseg::render {

inline constexpr int kCaptionHeight = 11;

using Rgb = std::array<std::uint8_t, 3>;

// Deterministic, well-separated color for instance `index`.
Rgb instance_color(std::size_t index);

// Pixels of `mask` with a 4-neighbour outside the mask (or on the border).
Mask contour(const Mask& mask);

// Draws text with a 5x7 bitmap font; unsupported characters render as blanks.
void draw_text(Image& image, int x, int y, std::string_view text, Rgb color);

// The input image with each instance's contour, class label and score drawn
// on top, followed by a caption strip reading "<n> instances".
Image overlay(const Image& image, const std::vector<Instance>& instances);

}  // namespace relseg::render
