#pragma once

#include "relseg/autograd.hpp"
#include "relseg/nn.hpp"

namespace relseg::irm {

// Number of aggregated per-instance feature channels the association is built from.
inline constexpr int kRelationChannels = 16;

// Ablation switches: which inputs feed the encoder and whether instances
// exchange messages at all.
struct IrmFlags {
  bool use_deep_features = true;  // DF
  bool use_mask = true;           // MSK
  bool use_relation = true;       // RL
};

struct InstanceFeatureSet {
  ag::Var features;  // [n, 16, 14, 14]
  IrmFlags flags;
  int size() const { return features.defined() ? features.dim(0) : 0; }
};

struct RelationMatrix {
  ag::Var pre_softmax;  // [n, n], mean over channels of B_j B_j^T
  ag::Var weights;      // [n, n], row-wise softmax of pre_softmax
};

// Channel-averaged instance association of an [n, c, h, w] feature set.
// Each channel slice is flattened to n x (h*w) and its Gram matrix taken.
RelationMatrix associate(const ag::Var& features);

// out_p = gamma * sum_q w_pq * A_q + A_p, for every channel and location.
ag::Var parse_messages(const ag::Var& features, const ag::Var& weights, const ag::Var& gamma);

class InstanceRelationModule {
 public:
  // `deep_channels` is the channel count of the mask head's pre-deconvolution features.
  InstanceRelationModule(nn::ParamStore& store, int deep_channels, IrmFlags flags, double gamma_init = 0.0);

  // deep_features: [n, C, 14, 14]; predicted_masks: [n, 1, 14, 14] sigmoid
  // probabilities of each instance's predicted class.
  InstanceFeatureSet encode(const ag::Var& deep_features, const ag::Var& predicted_masks) const;
  RelationMatrix associate(const InstanceFeatureSet& set) const { return irm::associate(set.features); }
  ag::Var parse_messages(const InstanceFeatureSet& set, const RelationMatrix& relation) const;
  // [n, 16, 14, 14] -> refined mask logits [n, kNumClasses, 28, 28].
  ag::Var refine(const ag::Var& features) const;

  // encode -> associate -> parse_messages -> refine; the relation steps are
  // skipped when use_relation is off.
  ag::Var operator()(const ag::Var& deep_features, const ag::Var& predicted_masks) const;

  int encoder_in_channels() const { return encoder_in_; }
  const IrmFlags& flags() const { return flags_; }
  const ag::Var& gamma() const { return gamma_; }

 private:
  IrmFlags flags_;
  int encoder_in_ = 0;
  nn::Conv2d enc1_, enc2_;
  ag::Var gamma_;
  nn::Deconv2x2 deconv_;
  nn::Conv2d classifier_;
};

}  // namespace relseg::irm
