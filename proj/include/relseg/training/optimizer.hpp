#pragma once

#include <vector>

#include "relseg/nn.hpp"

namespace relseg::training {

struct Schedule {
  double base_lr = 0.0025;
  double bias_lr_factor = 2.0;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  int warmup_iters = 500;
  double warmup_factor = 1.0 / 3.0;

  // Linear warmup from base_lr * warmup_factor, constant afterwards.
  double lr_at(int iteration) const;
};

struct StepInfo {
  double lr = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

// SGD with heavy-ball momentum (v = m v + g; p -= lr v). Biases get
// bias_lr_factor x lr and no weight decay.
class Sgd {
 public:
  Sgd(nn::ParamStore& store, Schedule schedule, double clip_norm);

  // Applies one update from the accumulated gradients, then zeroes them.
  StepInfo step(int iteration);

  const Schedule& schedule() const { return schedule_; }

 private:
  nn::ParamStore& store_;
  Schedule schedule_;
  double clip_norm_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace relseg::training
