#include "relseg/irm.hpp"

#include <algorithm>
#include <numeric>

#include "relseg/error.hpp"
#include "relseg/image.hpp"

namespace relseg::irm {

namespace {

int encoder_channels(const IrmFlags& f, int deep_channels) {
  if (!f.use_deep_features && !f.use_mask) {
    throw ConfigError("irm: at least one of irm.use_deep_features and irm.use_mask must be enabled");
  }
  return (f.use_deep_features ? deep_channels : 0) + (f.use_mask ? 1 : 0);
}

// Instances sorted by the contents of their feature rows. Summing messages in
// this order gives results that do not depend on how instances are listed.
std::vector<int> content_order(const ag::Var& rows) {
  const int n = rows.dim(0);
  const std::size_t len = rows.numel() / static_cast<std::size_t>(n);
  const double* data = rows.data().data();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::lexicographical_compare(data + a * len, data + (a + 1) * len, data + b * len, data + (b + 1) * len);
  });
  return order;
}

}  // namespace

RelationMatrix associate(const ag::Var& features) {
  if (features.rank() != 4 || features.dim(0) < 1) {
    throw ShapeError("associate: expected [n,c,h,w] with n >= 1, got " + ag::to_string(features.shape()));
  }
  const int n = features.dim(0), c = features.dim(1);
  const int flat = c * features.dim(2) * features.dim(3);
  // Summing the per-channel Gram matrices equals one Gram over the channel-concatenated rows.
  const ag::Var rows = ag::reshape(features, {n, flat});
  const ag::Var pre = ag::scale(ag::gram(rows), 1.0 / c);
  return {pre, ag::row_softmax(pre)};
}

ag::Var parse_messages(const ag::Var& features, const ag::Var& weights, const ag::Var& gamma) {
  const int n = features.dim(0);
  if (weights.rank() != 2 || weights.dim(0) != n || weights.dim(1) != n) {
    throw ShapeError("parse_messages: weights " + ag::to_string(weights.shape()) + " do not match " +
                     std::to_string(n) + " instances");
  }
  const int flat = static_cast<int>(features.numel()) / n;
  const ag::Var rows = ag::reshape(features, {n, flat});
  const ag::Var messages = ag::matmul_ordered(weights, rows, content_order(rows));
  return ag::reshape(ag::add(ag::scale_by(gamma, messages), rows), features.shape());
}

InstanceRelationModule::InstanceRelationModule(nn::ParamStore& store, int deep_channels, IrmFlags flags,
                                               double gamma_init)
    : flags_(flags),
      encoder_in_(encoder_channels(flags, deep_channels)),
      enc1_(store, "irm.encoder1", encoder_in_, kRelationChannels, 3, 1, 1),
      enc2_(store, "irm.encoder2", kRelationChannels, kRelationChannels, 3, 1, 1),
      deconv_(store, "irm.deconv", kRelationChannels, kRelationChannels),
      classifier_(store, "irm.classifier", kRelationChannels, kNumClasses, 1, 1, 0, nn::Init::normal(0.001)) {
  if (flags_.use_relation) gamma_ = store.add("irm.gamma", {1}, nn::Init::constant(gamma_init));
}

InstanceFeatureSet InstanceRelationModule::encode(const ag::Var& deep, const ag::Var& masks) const {
  if (deep.dim(0) != masks.dim(0)) {
    throw ShapeError("irm encode: " + std::to_string(deep.dim(0)) + " feature maps but " +
                     std::to_string(masks.dim(0)) + " masks");
  }
  if (masks.dim(1) != 1) throw ShapeError("irm encode: masks must have a single channel");
  std::vector<ag::Var> parts;
  if (flags_.use_deep_features) parts.push_back(deep);
  if (flags_.use_mask) parts.push_back(masks);
  const ag::Var input = parts.size() == 1 ? parts.front() : ag::concat(parts, 1);
  if (input.dim(1) != encoder_in_) {
    throw ShapeError("irm encode: encoder expects " + std::to_string(encoder_in_) + " channels, got " +
                     std::to_string(input.dim(1)));
  }
  return {ag::silu(enc2_(ag::silu(enc1_(input)))), flags_};
}

ag::Var InstanceRelationModule::parse_messages(const InstanceFeatureSet& set, const RelationMatrix& relation) const {
  if (!flags_.use_relation) return set.features;
  return irm::parse_messages(set.features, relation.weights, gamma_);
}

ag::Var InstanceRelationModule::refine(const ag::Var& features) const {
  return classifier_(ag::silu(deconv_(features)));
}

ag::Var InstanceRelationModule::operator()(const ag::Var& deep, const ag::Var& masks) const {
  const InstanceFeatureSet set = encode(deep, masks);
  if (set.size() == 0 || !flags_.use_relation) return refine(set.features);
  return refine(parse_messages(set, associate(set)));
}

}  // namespace relseg::irm
