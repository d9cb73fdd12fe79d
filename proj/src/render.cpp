#include "relseg/render.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace relseg::render {

namespace {

struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;  // 5 low bits per row, MSB on the left
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
    {'c', {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}}, {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
    {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}}, {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}}, {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
    {'s', {0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E}}, {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}}, {'y', {0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
};

const Glyph* find_glyph(char c) {
  for (const auto& g : kFont) {
    if (g.c == c) return &g;
  }
  return nullptr;
}

void put(Image& img, int y, int x, Rgb color, int max_y = -1) {
  if (max_y < 0) max_y = img.height;
  if (y < 0 || x < 0 || y >= max_y || x >= img.width) return;
  for (int c = 0; c < 3; ++c) img.px(y, x, c) = color[c];
}

std::string label(const Instance& inst) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s %.2f", inst.cls == CellClass::kNucleus ? "nuc" : "cyto", inst.score);
  return buf;
}

}  // namespace

Rgb instance_color(std::size_t index) {
  // Golden-ratio hue walk at full saturation.
  const double h = std::fmod(0.11 + 0.618033988749895 * static_cast<double>(index), 1.0) * 6.0;
  const int sector = static_cast<int>(h);
  const double f = h - sector;
  auto u8 = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  switch (sector) {
    case 0: return {255, u8(f), 0};
    case 1: return {u8(1 - f), 255, 0};
    case 2: return {0, 255, u8(f)};
    case 3: return {0, u8(1 - f), 255};
    case 4: return {u8(f), 0, 255};
    default: return {255, 0, u8(1 - f)};
  }
}

Mask contour(const Mask& mask) {
  Mask out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == mask.height - 1 || x == mask.width - 1 || !mask.at(y - 1, x) ||
                        !mask.at(y + 1, x) || !mask.at(y, x - 1) || !mask.at(y, x + 1);
      if (edge) out.at(y, x) = 1;
    }
  }
  return out;
}

namespace {

void draw_text_above(Image& image, int x, int y, std::string_view text, Rgb color, int max_y) {
  for (char ch : text) {
    if (const Glyph* g = find_glyph(ch)) {
      for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 5; ++c) {
          if (g->rows[r] & (0x10 >> c)) put(image, y + r, x + c, color, max_y);
        }
      }
    }
    x += 6;
  }
}

}  // namespace

void draw_text(Image& image, int x, int y, std::string_view text, Rgb color) {
  draw_text_above(image, x, y, text, color, image.height);
}

Image overlay(const Image& image, const std::vector<Instance>& instances) {
  Image out(image.height + kCaptionHeight, image.width);
  std::copy(image.rgb.begin(), image.rgb.end(), out.rgb.begin());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Rgb color = instance_color(i);
    const Mask edge = contour(instances[i].mask);
    for (int y = 0; y < edge.height && y < image.height; ++y) {
      for (int x = 0; x < edge.width && x < image.width; ++x) {
        if (edge.at(y, x)) put(out, y, x, color);
      }
    }
  }
  // Labels after all contours so text stays legible.
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Box& b = instances[i].box;
    const int x = static_cast<int>(b.x1) + 1;
    const int y = std::max(0, static_cast<int>(b.y1) - 8);
    draw_text_above(out, x, y, label(instances[i]), instance_color(i), image.height);
  }
  const std::string caption = std::to_string(instances.size()) + " instances";
  draw_text(out, 2, image.height + 2, caption, {255, 255, 255});
  return out;
}

}  // namespace relseg::render
