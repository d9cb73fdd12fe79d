#include "relseg/training/optimizer.hpp"

#include <cmath>

namespace relseg::training {

double Schedule::lr_at(int iteration) const {
  if (iteration >= warmup_iters) return base_lr;
  const double progress = static_cast<double>(iteration) / warmup_iters;
  return base_lr * (warmup_factor + (1.0 - warmup_factor) * progress);
}

Sgd::Sgd(nn::ParamStore& store, Schedule schedule, double clip_norm)
    : store_(store), schedule_(schedule), clip_norm_(clip_norm) {
  for (const auto& p : store_.params()) velocity_.emplace_back(p.var.numel(), 0.0);
}

StepInfo Sgd::step(int iteration) {
  StepInfo info;
  info.lr = schedule_.lr_at(iteration);
  auto& params = store_.params();

  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.var.mutable_grad()) sq += g * g;
  }
  info.grad_norm = std::sqrt(sq);
  double clip = 1.0;
  if (clip_norm_ > 0 && info.grad_norm > clip_norm_) {
    clip = clip_norm_ / info.grad_norm;
    info.clipped = true;
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const double lr = p.is_bias ? info.lr * schedule_.bias_lr_factor : info.lr;
    const double decay = p.is_bias ? 0.0 : schedule_.weight_decay;
    auto value = p.var.mutable_data();
    auto grad = p.var.mutable_grad();
    auto& vel = velocity_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * clip + decay * value[i];
      vel[i] = schedule_.momentum * vel[i] + g;
      value[i] -= lr * vel[i];
    }
  }
  store_.zero_grad();
  return info;
}

}  // namespace relseg::training
