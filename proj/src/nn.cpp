#include "relseg/nn.hpp"

#include <cmath>
#include <random>

#include "relseg/error.hpp"
#include "relseg/rng.hpp"

namespace relseg::nn {

Var ParamStore::add(const std::string& name, Shape shape, Init init, bool is_bias) {
  if (index_.count(name)) throw Error("duplicate parameter name: " + name);
  std::vector<double> values(ag::numel(shape), 0.0);
  auto rng = stream_rng(seed_, name);
  switch (init.kind) {
    case Init::Kind::kZeros:
      break;
    case Init::Kind::kConstant:
      std::fill(values.begin(), values.end(), init.value);
      break;
    case Init::Kind::kNormal: {
      std::normal_distribution<double> dist(0.0, init.value);
      for (double& v : values) v = dist(rng);
      break;
    }
    case Init::Kind::kKaiming: {
      const double fan_in = static_cast<double>(values.size()) / std::max(1, shape.empty() ? 1 : shape[0]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(1.0, fan_in)));
      for (double& v : values) v = dist(rng);
      break;
    }
  }
  Var var = Var::leaf(std::move(shape), std::move(values));
  index_[name] = params_.size();
  params_.push_back({name, var, is_bias});
  return var;
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Param* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.numel();
  return n;
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int kernel, int stride, int pad,
               Init weight_init)
    : weight_(store.add(name + ".weight", {cout, cin, kernel, kernel}, weight_init)),
      bias_(store.add(name + ".bias", {cout}, Init::zeros(), true)),
      stride_(stride),
      pad_(pad) {}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Init weight_init)
    : weight_(store.add(name + ".weight", {out, in}, weight_init)),
      bias_(store.add(name + ".bias", {out}, Init::zeros(), true)) {}

Deconv2x2::Deconv2x2(ParamStore& store, const std::string& name, int cin, int cout, Init weight_init)
    : bias_() {
  // Fan-in of a stride-2 2x2 deconvolution is Cin: each output sees one tap per input channel.
  if (weight_init.kind == Init::Kind::kKaiming) weight_init = Init::normal(std::sqrt(2.0 / cin));
  weight_ = store.add(name + ".weight", {cin, cout, 2, 2}, weight_init);
  bias_ = store.add(name + ".bias", {cout}, Init::zeros(), true);
}

}  // namespace relseg::nn
