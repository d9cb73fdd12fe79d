#include "relseg/drm.hpp"

#include <cmath>

#include "relseg/detector/boxes.hpp"
#include "relseg/error.hpp"

namespace relseg::drm {

std::vector<double> sinusoidal_embedding(std::span<const double> values, int dim) {
  const int per = dim / static_cast<int>(values.size());
  if (per < 2 || per % 2 != 0 || per * static_cast<int>(values.size()) != dim) {
    throw ShapeError("sinusoidal_embedding: dim " + std::to_string(dim) + " does not split into even parts");
  }
  std::vector<double> out;
  out.reserve(dim);
  for (double v : values) {
    for (int i = 0; i < per / 2; ++i) {
      const double freq = std::pow(1000.0, -2.0 * i / per);
      out.push_back(std::sin(100.0 * v * freq));
      out.push_back(std::cos(100.0 * v * freq));
    }
  }
  return out;
}

std::array<double, 4> geometric_offsets(const Box& t, const Box& o) {
  const double tw = std::max(t.width(), 1e-6), th = std::max(t.height(), 1e-6);
  const double ow = std::max(o.width(), 1e-6), oh = std::max(o.height(), 1e-6);
  const double dx = (o.x1 + 0.5 * ow) - (t.x1 + 0.5 * tw);
  const double dy = (o.y1 + 0.5 * oh) - (t.y1 + 0.5 * th);
  return {dx / tw, dy / th, std::log(ow / tw), std::log(oh / th)};
}

DuplicateRemovalModule::DuplicateRemovalModule(nn::ParamStore& store, int appearance_dim, DrmConfig config)
    : config_(config),
      input_(store, "drm.input", appearance_dim, config.embed_dim, nn::Init::normal(1.0 / std::sqrt(appearance_dim))),
      query_(store, "drm.query", config.embed_dim, config.embed_dim, nn::Init::normal(1.0 / std::sqrt(config.embed_dim))),
      key_(store, "drm.key", config.embed_dim, config.embed_dim, nn::Init::normal(1.0 / std::sqrt(config.embed_dim))),
      value_(store, "drm.value", config.embed_dim, config.embed_dim, nn::Init::normal(1.0 / std::sqrt(config.embed_dim))),
      geometry_(store, "drm.geometry", config.geometry_dim, 1, nn::Init::normal(0.01)),
      classifier_(store, "drm.classifier", config.embed_dim, 1, nn::Init::normal(0.01)) {
  if (config.top_k < 1) throw ConfigError("drm.top_k must be at least 1");
}

ag::Var DuplicateRemovalModule::location_embedding(std::span<const Box> boxes, int image_width,
                                                   int image_height) const {
  const int n = static_cast<int>(boxes.size());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n) * config_.embed_dim);
  for (const Box& b : boxes) {
    const double geom[4] = {(b.x1 + 0.5 * b.width()) / image_width, (b.y1 + 0.5 * b.height()) / image_height,
                            std::log(std::max(b.width(), 1e-6) / image_width),
                            std::log(std::max(b.height(), 1e-6) / image_height)};
    const auto e = sinusoidal_embedding(geom, config_.embed_dim);
    values.insert(values.end(), e.begin(), e.end());
  }
  return ag::Var::constant({n, config_.embed_dim}, std::move(values));
}

SparseRelation DuplicateRemovalModule::relate_sparse(const ag::Var& appearance, const ag::Var& location,
                                                     std::span<const Box> boxes, int k) const {
  if (k < 1) throw ConfigError("relate_sparse: k must be at least 1");
  const int n = appearance.dim(0);
  if (location.dim(0) != n || static_cast<int>(boxes.size()) != n) {
    throw ShapeError("relate_sparse: appearance, location and boxes disagree in count");
  }
  const int d = config_.embed_dim;
  if (n == 0) {
    return {ag::Var::zeros({0, d}), ag::Var::zeros({0, 0}), ag::Var::zeros({0, 0})};
  }
  const ag::Var f = ag::add(input_(appearance), location);
  const ag::Var q = query_(f), kk = key_(f), v = value_(f);

  std::vector<double> pair;
  pair.reserve(static_cast<std::size_t>(n) * n * config_.geometry_dim);
  for (int p = 0; p < n; ++p) {
    for (int o = 0; o < n; ++o) {
      const auto off = geometric_offsets(boxes[p], boxes[o]);
      const auto e = sinusoidal_embedding(off, config_.geometry_dim);
      pair.insert(pair.end(), e.begin(), e.end());
    }
  }
  const ag::Var geometry =
      ag::reshape(geometry_(ag::Var::constant({n * n, config_.geometry_dim}, std::move(pair))), {n, n});
  const ag::Var logits = ag::add(ag::scale(ag::matmul_nt(q, kk), 1.0 / std::sqrt(double(d))), geometry);
  const ag::Var weights = ag::row_softmax(ag::keep_topk_rows(logits, k));
  return {ag::add(f, ag::matmul(weights, v)), weights, logits};
}

ag::Var DuplicateRemovalModule::classify_duplicates(const ag::Var& attended) const { return classifier_(attended); }

ag::Var DuplicateRemovalModule::operator()(const ag::Var& appearance, std::span<const Box> boxes, int image_width,
                                           int image_height) const {
  const ag::Var loc = location_embedding(boxes, image_width, image_height);
  return classify_duplicates(relate_sparse(appearance, loc, boxes, config_.top_k).attended);
}

std::vector<int> rescore_and_nms(DuplicateScoredBatch& batch, double iou_threshold) {
  const std::size_t n = batch.boxes.size();
  if (batch.cls_score.size() != n || batch.dup_prob.size() != n) {
    throw ShapeError("rescore_and_nms: field lengths differ");
  }
  batch.final_score.resize(n);
  for (std::size_t i = 0; i < n; ++i) batch.final_score[i] = batch.cls_score[i] * batch.dup_prob[i];
  // nms() already returns survivors by descending score.
  return detector::nms(batch.boxes, batch.final_score, iou_threshold);
}

std::vector<int> duplicate_labels(std::span<const Box> predictions, std::span<const double> cls_score,
                                  std::span<const Box> ground_truth) {
  if (predictions.size() != cls_score.size()) throw ShapeError("duplicate_labels: score count");
  std::vector<int> labels(predictions.size(), 0);
  for (const Box& gt : ground_truth) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const double iou = box_iou(predictions[i], gt);
      if (iou <= 0.0) continue;
      if (best < 0 || iou > best_iou || (iou == best_iou && cls_score[i] > cls_score[best])) {
        best = static_cast<int>(i);
        best_iou = iou;
      }
    }
    if (best >= 0) labels[best] = 1;
  }
  return labels;
}

}  // namespace relseg::drm
