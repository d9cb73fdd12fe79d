#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace relseg {

// Axis-aligned box in continuous pixel-edge coordinates: pixel (x, y) spans
// [x, x+1) x [y, y+1), so the tight box of a single pixel has unit size.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool operator==(const Box&) const = default;
};

double box_iou(const Box& a, const Box& b);

// Binary mask, row-major, one byte per pixel (0 or 1).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
  bool empty() const { return area() == 0; }
  // Tight box; nullopt for an empty mask.
  std::optional<Box> tight_box() const;
  bool operator==(const Mask&) const = default;
};

std::size_t intersection_area(const Mask& a, const Mask& b);
double mask_iou(const Mask& a, const Mask& b);
bool is_subset(const Mask& inner, const Mask& outer);

// RGB image with 8-bit channels, interleaved; value(y,x,c) is in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  float value(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0f;
  }
  std::uint8_t& px(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

enum class CellClass : int { kCytoplasm = 0, kNucleus = 1 };

constexpr int kNumClasses = 2;  // foreground classes; detector label = class + 1, 0 is background

std::string_view class_name(CellClass c);
std::optional<CellClass> parse_class(std::string_view name);

struct Instance {
  CellClass cls = CellClass::kCytoplasm;
  Mask mask;
  Box box;
  double score = 1.0;  // confidence for predictions; 1 for ground truth
  bool operator==(const Instance&) const = default;
};

struct SampleRecord {
  std::string id;
  Image image;
  std::vector<Instance> instances;
  std::vector<Mask> distractors;
  bool operator==(const SampleRecord&) const = default;
};

}  // namespace relseg
