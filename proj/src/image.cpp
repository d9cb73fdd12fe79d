#include "relseg/image.hpp"

#include "relseg/error.hpp"

namespace relseg {

double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::size_t Mask::area() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

std::optional<Box> Mask::tight_box() const {
  int x1 = width, y1 = height, x2 = -1, y2 = -1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (at(y, x)) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
    }
  }
  if (x2 < 0) return std::nullopt;
  return Box{double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

namespace {
void check_dims(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("mask dimension mismatch: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}
}  // namespace

std::size_t intersection_area(const Mask& a, const Mask& b) {
  check_dims(a, b);
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) n += (a.data[i] && b.data[i]);
  return n;
}

double mask_iou(const Mask& a, const Mask& b) {
  const std::size_t inter = intersection_area(a, b);
  const std::size_t uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

bool is_subset(const Mask& inner, const Mask& outer) {
  check_dims(inner, outer);
  for (std::size_t i = 0; i < inner.data.size(); ++i) {
    if (inner.data[i] && !outer.data[i]) return false;
  }
  return true;
}

std::string_view class_name(CellClass c) { return c == CellClass::kCytoplasm ? "cytoplasm" : "nucleus"; }

std::optional<CellClass> parse_class(std::string_view name) {
  if (name == "cytoplasm") return CellClass::kCytoplasm;
  if (name == "nucleus") return CellClass::kNucleus;
  return std::nullopt;
}

}  // namespace relseg
