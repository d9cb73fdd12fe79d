#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "relseg/autograd.hpp"
#include "relseg/image.hpp"
#include "relseg/nn.hpp"

namespace testutil {

using relseg::ag::Var;

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline Var random_leaf(relseg::ag::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  auto v = random_values(relseg::ag::numel(shape), rng, -scale, scale);
  return Var::leaf(std::move(shape), std::move(v));
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;  // largest |a - n| / max(|a|, |n|) among entries above the floor
  std::string first_failure;
};

// Central differences on every element of `vars` against the analytic
// gradient of the scalar `loss()`. An entry passes when
// |a - n| <= rel * max(|a|, |n|) + abs_floor.
inline GradCheck check_gradients(const std::function<Var()>& loss, const std::vector<std::pair<std::string, Var>>& vars,
                                 double eps = 1e-3, double rel = 1e-4, double abs_floor = 1e-9) {
  for (const auto& [name, v] : vars) const_cast<Var&>(v).zero_grad();
  relseg::ag::backward(loss());
  GradCheck r;
  for (const auto& [name, v0] : vars) {
    Var v = v0;
    const std::vector<double> analytic(v.grad().begin(), v.grad().end());
    auto data = v.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      double up, down;
      {
        relseg::ag::NoGradGuard g;
        data[i] = keep + eps;
        up = loss().item();
        data[i] = keep - eps;
        down = loss().item();
      }
      data[i] = keep;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      ++r.checked;
      if (scale > abs_floor) r.worst = std::max(r.worst, std::abs(a - numeric) / scale);
      if (std::abs(a - numeric) > rel * scale + abs_floor) {
        if (r.failed++ == 0) {
          r.first_failure = name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                            std::to_string(numeric);
        }
      }
    }
  }
  return r;
}

inline std::vector<std::pair<std::string, Var>> all_params(const relseg::nn::ParamStore& store,
                                                          const std::string& prefix = "") {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto& p : store.params()) {
    if (p.name.rfind(prefix, 0) == 0) out.emplace_back(p.name, p.var);
  }
  return out;
}

inline relseg::Mask rect_mask(int h, int w, int x0, int y0, int x1, int y1) {
  relseg::Mask m(h, w);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  }
  return m;
}

inline relseg::Mask random_mask(int h, int w, std::mt19937_64& rng, double density) {
  relseg::Mask m(h, w);
  std::bernoulli_distribution b(density);
  for (auto& v : m.data) v = b(rng) ? 1 : 0;
  return m;
}

}  // namespace testutil
