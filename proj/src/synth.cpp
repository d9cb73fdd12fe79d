#include "relseg/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <vector>

#include "relseg/error.hpp"
#include "relseg/rng.hpp"

namespace relseg::synth {

namespace {

struct Ellipse {
  double cx = 0, cy = 0, a = 1, b = 1, theta = 0;

  // Normalized radius at the centre of pixel (x, y); <= 1 inside.
  double rho(int x, int y) const {
    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a;
    const double v = (-dx * s + dy * c) / b;
    return std::sqrt(u * u + v * v);
  }
  double reach() const { return std::max(a, b); }
};

struct Cell {
  Ellipse cyto;
  Ellipse nucleus;
  std::array<double, 3> color{};
};

Mask rasterize(const Ellipse& e, int size) {
  Mask m(size, size);
  const int x0 = std::max(0, int(std::floor(e.cx - e.reach())) - 1);
  const int x1 = std::min(size - 1, int(std::ceil(e.cx + e.reach())) + 1);
  const int y0 = std::max(0, int(std::floor(e.cy - e.reach())) - 1);
  const int y1 = std::min(size - 1, int(std::ceil(e.cy + e.reach())) + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (e.rho(x, y) <= 1.0) m.at(y, x) = 1;
    }
  }
  return m;
}

// Pixel-count IoU on an unbounded grid (placement happens before clipping).
double ellipse_iou(const Ellipse& p, const Ellipse& q) {
  const int x0 = int(std::floor(std::min(p.cx - p.reach(), q.cx - q.reach()))) - 1;
  const int x1 = int(std::ceil(std::max(p.cx + p.reach(), q.cx + q.reach()))) + 1;
  const int y0 = int(std::floor(std::min(p.cy - p.reach(), q.cy - q.reach()))) - 1;
  const int y1 = int(std::ceil(std::max(p.cy + p.reach(), q.cy + q.reach()))) + 1;
  long inter = 0, uni = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const bool in_p = p.rho(x, y) <= 1.0, in_q = q.rho(x, y) <= 1.0;
      inter += in_p && in_q;
      uni += in_p || in_q;
    }
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

bool inside_frame(const Ellipse& e, int size) {
  const double margin = 2.0;
  return e.cx - e.reach() >= margin && e.cy - e.reach() >= margin && e.cx + e.reach() <= size - margin &&
         e.cy + e.reach() <= size - margin;
}

class Scene {
 public:
  explicit Scene(const SceneSpec& spec) : spec_(spec), rng_(stream_rng(spec.rng_seed, "synth.scene")) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(rng_); }

  Ellipse random_shape(double cx, double cy) {
    Ellipse e;
    e.cx = cx;
    e.cy = cy;
    e.a = uniform(spec_.cell_radius_min, spec_.cell_radius_max);
    e.b = e.a * uniform(0.75, 1.0);
    e.theta = uniform(0.0, std::numbers::pi);
    return e;
  }

  Cell make_cell(const Ellipse& cyto) {
    Cell c;
    c.cyto = cyto;
    const double r = spec_.nucleus_ratio;
    // A scaled copy shifted by less than (1 - r) in normalized units stays inside.
    const double shift = (1.0 - r) * 0.5 * std::min(cyto.a, cyto.b) * uniform(0.0, 1.0);
    const double dir = uniform(0.0, 2.0 * std::numbers::pi);
    c.nucleus = Ellipse{cyto.cx + shift * std::cos(dir), cyto.cy + shift * std::sin(dir), cyto.a * r, cyto.b * r,
                        cyto.theta};
    c.color = {0.62 + uniform(-0.06, 0.06), 0.48 + uniform(-0.06, 0.06), 0.70 + uniform(-0.06, 0.06)};
    return c;
  }

  // Places new_shape at the distance from anchor that hits overlap_target.
  bool place_against(const Ellipse& anchor, Ellipse& shape) {
    const double dir = uniform(0.0, 2.0 * std::numbers::pi);
    const double ux = std::cos(dir), uy = std::sin(dir);
    auto at = [&](double d) {
      Ellipse e = shape;
      e.cx = anchor.cx + d * ux;
      e.cy = anchor.cy + d * uy;
      return e;
    };
    const double target = spec_.overlap_target;
    double lo = 0.0, hi = anchor.reach() + shape.reach() + 2.0;
    if (ellipse_iou(anchor, at(lo)) < target) return false;
    for (int it = 0; it < 24; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (ellipse_iou(anchor, at(mid)) > target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    shape = at(target > 0.0 ? 0.5 * (lo + hi) : hi + 1.0);
    return std::abs(ellipse_iou(anchor, shape) - target) <= kOverlapTolerance;
  }

  bool try_clump(std::vector<Cell>& cells) {
    const int count = uniform_int(spec_.cells_per_clump_min, spec_.cells_per_clump_max);
    const double margin = spec_.cell_radius_max + 2.0;
    const double cx = uniform(margin, spec_.image_size - margin);
    const double cy = uniform(margin, spec_.image_size - margin);
    std::vector<Cell> clump;
    for (int i = 0; i < count; ++i) {
      Ellipse shape = random_shape(cx, cy);
      if (i > 0) {
        const Cell& anchor = clump[uniform_int(0, i - 1)];
        if (!place_against(anchor.cyto, shape)) return false;
      }
      if (!inside_frame(shape, spec_.image_size)) return false;
      const Cell cell = make_cell(shape);
      for (const auto* group : {&cells, &clump}) {
        for (const Cell& other : *group) {
          if (ellipse_iou(other.cyto, shape) > spec_.overlap_target + kOverlapTolerance) return false;
        }
      }
      clump.push_back(cell);
    }
    // Each nucleus must lie in exactly one cytoplasm.
    std::vector<Cell> all = cells;
    all.insert(all.end(), clump.begin(), clump.end());
    std::vector<Mask> cyto, nuc;
    for (const Cell& c : all) {
      Mask cm = rasterize(c.cyto, spec_.image_size);
      Mask nm = rasterize(c.nucleus, spec_.image_size);
      for (std::size_t k = 0; k < nm.data.size(); ++k) nm.data[k] &= cm.data[k];
      if (nm.empty()) return false;
      cyto.push_back(std::move(cm));
      nuc.push_back(std::move(nm));
    }
    for (std::size_t i = cells.size(); i < all.size(); ++i) {
      for (std::size_t j = 0; j < all.size(); ++j) {
        if (i == j) continue;
        if (is_subset(nuc[i], cyto[j]) || is_subset(nuc[j], cyto[i])) return false;
      }
    }
    cells.insert(cells.end(), clump.begin(), clump.end());
    return true;
  }

  SampleRecord build(const std::string& id) {
    std::vector<Cell> cells;
    for (int k = 0; k < spec_.n_clumps; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) placed = try_clump(cells);
      if (!placed) {
        throw InfeasibleSpecError("could not place clump " + std::to_string(k) + " with overlap_target " +
                                  std::to_string(spec_.overlap_target) + " after " +
                                  std::to_string(kPlacementRetries) + " attempts");
      }
    }

    SampleRecord rec;
    rec.id = id;
    const int n = spec_.image_size;
    std::vector<double> canvas(static_cast<std::size_t>(n) * n * 3);
    const std::array<double, 3> background{0.93, 0.91, 0.95};
    for (std::size_t i = 0; i < canvas.size(); ++i) canvas[i] = background[i % 3];

    for (const Cell& c : cells) {
      Mask cm = rasterize(c.cyto, n);
      Mask nm = rasterize(c.nucleus, n);
      for (std::size_t k = 0; k < nm.data.size(); ++k) nm.data[k] &= cm.data[k];
      paint(canvas, c.cyto, c.color, 0.38, 1.2, 0.03);
      rec.instances.push_back({CellClass::kCytoplasm, cm, *cm.tight_box(), 1.0});
      rec.instances.push_back({CellClass::kNucleus, nm, *nm.tight_box(), 1.0});
    }
    std::vector<const Mask*> nuclei;
    for (const auto& inst : rec.instances) {
      if (inst.cls == CellClass::kNucleus) nuclei.push_back(&inst.mask);
    }
    for (const Cell& c : cells) {
      const std::array<double, 3> dark{0.34 + uniform(-0.04, 0.04), 0.24 + uniform(-0.04, 0.04),
                                       0.48 + uniform(-0.04, 0.04)};
      paint(canvas, c.nucleus, dark, 0.85, 0.7, 0.04);
    }

    for (int k = 0; k < spec_.n_distractors; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
        const double r = uniform(3.0, 6.0);
        const Ellipse disc{uniform(r + 2, n - r - 2), uniform(r + 2, n - r - 2), r, r, 0.0};
        Mask dm = rasterize(disc, n);
        bool clash = dm.empty();
        for (const Mask* nm : nuclei) clash = clash || intersection_area(dm, *nm) > 0;
        if (clash) continue;
        const std::array<double, 3> tone{0.22 + uniform(-0.04, 0.04), 0.16 + uniform(-0.04, 0.04),
                                         0.30 + uniform(-0.04, 0.04)};
        paint(canvas, disc, tone, 0.9, 0.6, 0.02);
        rec.distractors.push_back(std::move(dm));
        placed = true;
      }
      if (!placed) throw InfeasibleSpecError("could not place distractor " + std::to_string(k));
    }

    rec.image = Image(n, n);
    for (std::size_t i = 0; i < canvas.size(); ++i) {
      rec.image.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(canvas[i], 0.0, 1.0) * 255.0));
    }
    return rec;
  }

 private:
  // Alpha-blends `color` over the canvas with a Gaussian-blurred edge of
  // width `edge_sigma` and multiplicative texture noise inside the shape.
  void paint(std::vector<double>& canvas, const Ellipse& e, const std::array<double, 3>& color, double opacity,
             double edge_sigma, double texture) {
    const int n = spec_.image_size;
    const int x0 = std::max(0, int(std::floor(e.cx - e.reach() - 4)));
    const int x1 = std::min(n - 1, int(std::ceil(e.cx + e.reach() + 4)));
    const int y0 = std::max(0, int(std::floor(e.cy - e.reach() - 4)));
    const int y1 = std::min(n - 1, int(std::ceil(e.cy + e.reach() + 4)));
    const double scale = std::sqrt(e.a * e.b);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dist = (e.rho(x, y) - 1.0) * scale;
        const double alpha = 0.5 * std::erfc(dist / (edge_sigma * std::numbers::sqrt2)) * opacity;
        if (alpha < 1e-4) continue;
        const double grain = 1.0 + normal(texture);
        for (int ch = 0; ch < 3; ++ch) {
          double& v = canvas[(static_cast<std::size_t>(y) * n + x) * 3 + ch];
          v = v * (1.0 - alpha) + std::clamp(color[ch] * grain, 0.0, 1.0) * alpha;
        }
      }
    }
  }

  const SceneSpec& spec_;
  std::mt19937_64 rng_;
};

}  // namespace

void SceneSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("scene spec field '" + field + "' " + why);
  };
  if (image_size < 16 || image_size % 16 != 0) fail("image_size", "must be a positive multiple of 16");
  if (n_clumps < 0) fail("n_clumps", "must be non-negative");
  if (cells_per_clump_min < 1 || cells_per_clump_max < cells_per_clump_min) {
    fail("cells_per_clump", "needs 1 <= min <= max");
  }
  if (cell_radius_min < 2.0 || cell_radius_max < cell_radius_min) fail("cell_radius", "needs 2 <= min <= max");
  if (2.0 * cell_radius_max + 8.0 > image_size) fail("cell_radius", "too large for image_size");
  if (!(nucleus_ratio > 0.0 && nucleus_ratio < 1.0)) fail("nucleus_ratio", "must lie in (0,1)");
  if (!(overlap_target >= 0.0 && overlap_target <= 0.7)) fail("overlap_target", "must lie in [0,0.7]");
  if (n_distractors < 0) fail("n_distractors", "must be non-negative");
}

SampleRecord generate_sample(const SceneSpec& spec, const std::string& id) {
  spec.validate();
  return Scene(spec).build(id);
}

std::vector<SampleRecord> generate_dataset(SceneSpec spec, int count, std::uint64_t seed) {
  std::vector<SampleRecord> out;
  for (int i = 0; i < count; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "%06d", i);
    spec.rng_seed = fnv1a("scene:" + std::to_string(seed) + ":" + std::to_string(i));
    out.push_back(generate_sample(spec, id));
  }
  return out;
}

}  // namespace relseg::synth
