#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "relseg/autograd.hpp"

namespace relseg::nn {

using ag::Shape;
using ag::Var;

struct Init {
  enum class Kind { kZeros, kConstant, kNormal, kKaiming } kind = Kind::kZeros;
  double value = 0.0;  // constant value, or standard deviation for kNormal

  static Init zeros() { return {}; }
  static Init constant(double v) { return {Kind::kConstant, v}; }
  static Init normal(double stddev) { return {Kind::kNormal, stddev}; }
  // He-normal over fan_in = numel / shape[0].
  static Init kaiming() { return {Kind::kKaiming, 0.0}; }
};

struct Param {
  std::string name;
  Var var;
  bool is_bias = false;
};

// Owns every trainable tensor of a model, in registration order.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Var add(const std::string& name, Shape shape, Init init, bool is_bias = false);

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Param* find(const std::string& name) const;
  Param* find(const std::string& name);
  void zero_grad();
  std::size_t total_size() const;

 private:
  std::uint64_t seed_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int cin, int cout, int kernel, int stride, int pad,
         Init weight_init = Init::kaiming());
  Var operator()(const Var& x) const { return ag::conv2d(x, weight_, bias_, stride_, pad_); }
  int in_channels() const { return weight_.dim(1); }
  int out_channels() const { return weight_.dim(0); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
  int stride_ = 1, pad_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Init weight_init = Init::kaiming());
  Var operator()(const Var& x) const { return ag::linear(x, weight_, bias_); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
};

class Deconv2x2 {
 public:
  Deconv2x2() = default;
  Deconv2x2(ParamStore& store, const std::string& name, int cin, int cout, Init weight_init = Init::kaiming());
  Var operator()(const Var& x) const { return ag::deconv2x2(x, weight_, bias_); }

 private:
  Var weight_, bias_;
};

}  // namespace relseg::nn
