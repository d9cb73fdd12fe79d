#include "relseg/detector/roi_align.hpp"

#include <array>
#include <cmath>

#include "relseg/error.hpp"

namespace relseg::detector {

namespace {

struct Tap {
  std::array<int, 4> index;  // flat offsets within one H*W plane
  std::array<double, 4> weight;
};

// Bilinear taps for a continuous feature coordinate (feature value i sits at
// coordinate i). Points beyond one cell outside the map contribute nothing.
Tap bilinear_tap(double y, double x, int h, int w) {
  Tap t{{0, 0, 0, 0}, {0, 0, 0, 0}};
  if (y < -1.0 || y > h || x < -1.0 || x > w) return t;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  int y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  t.index = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
  t.weight = {hy * hx, hy * lx, ly * hx, ly * lx};
  return t;
}

struct BoxPlan {
  std::size_t level;
  std::vector<Tap> taps;  // out*out bins, sr*sr taps each, bin-major
};

BoxPlan plan_box(const Box& box, std::size_t level, int stride, int h, int w, int out, int sr) {
  BoxPlan plan{level, {}};
  plan.taps.reserve(static_cast<std::size_t>(out) * out * sr * sr);
  const double x1 = box.x1 / stride - 0.5, y1 = box.y1 / stride - 0.5;
  const double bin_w = (box.x2 - box.x1) / stride / out;
  const double bin_h = (box.y2 - box.y1) / stride / out;
  for (int ph = 0; ph < out; ++ph) {
    for (int pw = 0; pw < out; ++pw) {
      for (int iy = 0; iy < sr; ++iy) {
        const double y = y1 + ph * bin_h + (iy + 0.5) * bin_h / sr;
        for (int ix = 0; ix < sr; ++ix) {
          const double x = x1 + pw * bin_w + (ix + 0.5) * bin_w / sr;
          plan.taps.push_back(bilinear_tap(y, x, h, w));
        }
      }
    }
  }
  return plan;
}

ag::Var run(const std::vector<ag::Var>& levels, std::vector<BoxPlan> plans, int channels, int out, int sr) {
  const int n = static_cast<int>(plans.size());
  const std::size_t bins = static_cast<std::size_t>(out) * out;
  const std::size_t per_bin = static_cast<std::size_t>(sr) * sr;
  const double inv = 1.0 / static_cast<double>(per_bin);
  std::vector<double> result(static_cast<std::size_t>(n) * channels * bins, 0.0);
  for (int i = 0; i < n; ++i) {
    const BoxPlan& plan = plans[i];
    const ag::Var& f = levels[plan.level];
    const std::size_t plane = static_cast<std::size_t>(f.dim(2)) * f.dim(3);
    for (int c = 0; c < channels; ++c) {
      const double* src = f.data().data() + c * plane;
      double* dst = result.data() + (static_cast<std::size_t>(i) * channels + c) * bins;
      for (std::size_t b = 0; b < bins; ++b) {
        double acc = 0.0;
        for (std::size_t s = 0; s < per_bin; ++s) {
          const Tap& t = plan.taps[b * per_bin + s];
          acc += t.weight[0] * src[t.index[0]] + t.weight[1] * src[t.index[1]] + t.weight[2] * src[t.index[2]] +
                 t.weight[3] * src[t.index[3]];
        }
        dst[b] = acc * inv;
      }
    }
  }
  return ag::make_op({n, channels, out, out}, std::move(result), levels,
                     [plans = std::move(plans), channels, bins, per_bin, inv](ag::Node& self) {
                       for (std::size_t i = 0; i < plans.size(); ++i) {
                         const BoxPlan& plan = plans[i];
                         double* g = ag::parent_grad(self, plan.level);
                         if (!g) continue;
                         const auto& shape = self.parents[plan.level]->shape;
                         const std::size_t plane = static_cast<std::size_t>(shape[2]) * shape[3];
                         for (int c = 0; c < channels; ++c) {
                           double* dst = g + c * plane;
                           const double* go = self.grad.data() + (i * channels + c) * bins;
                           for (std::size_t b = 0; b < bins; ++b) {
                             const double v = go[b] * inv;
                             for (std::size_t s = 0; s < per_bin; ++s) {
                               const Tap& t = plan.taps[b * per_bin + s];
                               for (int k = 0; k < 4; ++k) dst[t.index[k]] += t.weight[k] * v;
                             }
                           }
                         }
                       }
                     });
}

void check_box(const Box& b, std::size_t index) {
  if (!(b.width() > 0 && b.height() > 0 && b.area() >= 1.0)) throw DegenerateBoxError(index);
}

}  // namespace

std::size_t assign_level(const Box& box, std::span<const int> strides) {
  const double size = std::sqrt(box.area()) / kRoiSize;
  std::size_t level = 0;
  for (std::size_t l = 0; l < strides.size(); ++l) {
    if (strides[l] <= size) level = l;
  }
  return level;
}

ag::Var roi_align_level(const ag::Var& feature, int stride, std::span<const Box> boxes, int output_size,
                        int sampling_ratio) {
  if (feature.rank() != 4 || feature.dim(0) != 1) {
    throw ShapeError("roi_align: expected [1,C,H,W] features, got " + ag::to_string(feature.shape()));
  }
  std::vector<BoxPlan> plans;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    check_box(boxes[i], i);
    plans.push_back(plan_box(boxes[i], 0, stride, feature.dim(2), feature.dim(3), output_size, sampling_ratio));
  }
  return run({feature}, std::move(plans), feature.dim(1), output_size, sampling_ratio);
}

ag::Var roi_align(const FeaturePyramid& pyramid, std::span<const Box> boxes, int output_size, int sampling_ratio) {
  if (pyramid.levels.empty()) throw ShapeError("roi_align: empty pyramid");
  std::vector<BoxPlan> plans;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    check_box(boxes[i], i);
    const std::size_t l = assign_level(boxes[i], pyramid.strides);
    const ag::Var& f = pyramid.levels[l];
    plans.push_back(plan_box(boxes[i], l, pyramid.strides[l], f.dim(2), f.dim(3), output_size, sampling_ratio));
  }
  return run(pyramid.levels, std::move(plans), pyramid.channels(), output_size, sampling_ratio);
}

}  // namespace relseg::detector
