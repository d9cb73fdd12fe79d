#include "relseg/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "relseg/error.hpp"

namespace relseg::metrics {

namespace {

void check_dims(std::span<const Mask> a, std::span<const Mask> b) {
  const Mask* ref = !a.empty() ? &a.front() : (!b.empty() ? &b.front() : nullptr);
  if (!ref) return;
  for (auto set : {a, b}) {
    for (const Mask& m : set) {
      if (m.height != ref->height || m.width != ref->width) throw ShapeError("metrics: mask dimension mismatch");
    }
  }
}

struct PairTable {
  std::vector<std::size_t> inter;  // gt-major
  std::vector<std::size_t> gt_area, pred_area;
  std::size_t n_pred = 0;

  double iou(std::size_t g, std::size_t p) const {
    const std::size_t i = inter[g * n_pred + p];
    const std::size_t u = gt_area[g] + pred_area[p] - i;
    return u == 0 ? 0.0 : static_cast<double>(i) / static_cast<double>(u);
  }
};

PairTable pair_table(std::span<const Mask> gt, std::span<const Mask> pred) {
  PairTable t;
  t.n_pred = pred.size();
  for (const Mask& m : gt) t.gt_area.push_back(m.area());
  for (const Mask& m : pred) t.pred_area.push_back(m.area());
  std::vector<std::optional<Box>> gb, pb;
  for (const Mask& m : gt) gb.push_back(m.tight_box());
  for (const Mask& m : pred) pb.push_back(m.tight_box());
  t.inter.assign(gt.size() * pred.size(), 0);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (!gb[g] || !pb[p] || box_iou(*gb[g], *pb[p]) <= 0.0) continue;
      t.inter[g * pred.size() + p] = intersection_area(gt[g], pred[p]);
    }
  }
  return t;
}

}  // namespace

AjiResult compute_aji(std::span<const Mask> gt, std::span<const Mask> pred) {
  check_dims(gt, pred);
  AjiResult r;
  if (gt.empty()) {
    r.aji = pred.empty() ? 1.0 : 0.0;
    for (std::size_t p = 0; p < pred.size(); ++p) {
      r.unmatched_pred.push_back(static_cast<int>(p));
      r.union_area += pred[p].area();
    }
    return r;
  }
  const PairTable t = pair_table(gt, pred);
  std::vector<char> used(pred.size(), 0);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (pred.empty()) {
      r.union_area += t.gt_area[g];
      continue;
    }
    std::size_t best = 0;
    double best_iou = t.iou(g, 0);
    for (std::size_t p = 1; p < pred.size(); ++p) {
      const double iou = t.iou(g, p);
      if (iou > best_iou) {
        best = p;
        best_iou = iou;
      }
    }
    const std::size_t inter = t.inter[g * pred.size() + best];
    r.intersection += inter;
    r.union_area += t.gt_area[g] + t.pred_area[best] - inter;
    r.matches.push_back({static_cast<int>(g), static_cast<int>(best), best_iou});
    used[best] = 1;
  }
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (!used[p]) {
      r.unmatched_pred.push_back(static_cast<int>(p));
      r.union_area += t.pred_area[p];
    }
  }
  r.aji = r.union_area == 0 ? 0.0 : static_cast<double>(r.intersection) / static_cast<double>(r.union_area);
  return r;
}

F1Result compute_f1(std::span<const Mask> gt, std::span<const Mask> pred, std::span<const double> scores,
                    double iou_threshold) {
  check_dims(gt, pred);
  if (scores.size() != pred.size()) throw ShapeError("compute_f1: one score per prediction required");
  F1Result r;
  if (gt.empty() || pred.empty()) {
    r.f1 = (gt.empty() && pred.empty()) ? 1.0 : 0.0;
    r.precision = r.recall = r.f1;
    return r;
  }
  const PairTable t = pair_table(gt, pred);
  std::vector<int> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<char> claimed(gt.size(), 0);
  for (int p : order) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (claimed[g]) continue;
      const double iou = t.iou(g, p);
      if (iou > best_iou) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      claimed[best] = 1;
      r.matches.push_back({best, p, best_iou});
    }
  }
  r.true_positives = static_cast<int>(r.matches.size());
  r.precision = static_cast<double>(r.true_positives) / static_cast<double>(pred.size());
  r.recall = static_cast<double>(r.true_positives) / static_cast<double>(gt.size());
  r.f1 = r.true_positives == 0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

EvalReport evaluate(const std::vector<SampleRecord>& ground_truth, const std::vector<SampleRecord>& predictions,
                    double f1_iou_threshold) {
  std::map<std::string, const SampleRecord*> by_id;
  for (const auto& p : predictions) by_id[p.id] = &p;

  EvalReport report;
  struct Pool {
    double aji_sum = 0;
    long tp = 0, n_pred = 0, n_gt = 0;
  };
  std::map<std::string, Pool> pools;
  for (const auto& gt : ground_truth) {
    auto it = by_id.find(gt.id);
    if (it == by_id.end()) throw Error("no prediction for image '" + gt.id + "'");
    const SampleRecord& pred = *it->second;
    ImageBreakdown row{gt.id, {}, {}};
    for (CellClass cls : {CellClass::kCytoplasm, CellClass::kNucleus}) {
      std::vector<Mask> g, p;
      std::vector<double> s;
      for (const auto& inst : gt.instances) {
        if (inst.cls == cls) g.push_back(inst.mask);
      }
      for (const auto& inst : pred.instances) {
        if (inst.cls == cls) {
          p.push_back(inst.mask);
          s.push_back(inst.score);
        }
      }
      const std::string name(class_name(cls));
      AjiResult a = compute_aji(g, p);
      F1Result f = compute_f1(g, p, s, f1_iou_threshold);
      Pool& pool = pools[name];
      pool.aji_sum += a.aji;
      pool.tp += f.true_positives;
      pool.n_pred += static_cast<long>(p.size());
      pool.n_gt += static_cast<long>(g.size());
      row.aji[name] = std::move(a);
      row.f1[name] = std::move(f);
    }
    report.per_image.push_back(std::move(row));
  }
  for (CellClass cls : {CellClass::kCytoplasm, CellClass::kNucleus}) {
    const std::string name(class_name(cls));
    const Pool& pool = pools[name];
    ClassScores cs;
    const double images = static_cast<double>(ground_truth.size());
    cs.aji = images > 0 ? pool.aji_sum / images : 1.0;
    if (pool.n_gt == 0 && pool.n_pred == 0) {
      cs.f1 = cs.precision = cs.recall = 1.0;
    } else {
      cs.precision = pool.n_pred ? double(pool.tp) / double(pool.n_pred) : 0.0;
      cs.recall = pool.n_gt ? double(pool.tp) / double(pool.n_gt) : 0.0;
      cs.f1 = pool.tp ? 2.0 * cs.precision * cs.recall / (cs.precision + cs.recall) : 0.0;
    }
    report.per_class[name] = cs;
    report.mean_aji += cs.aji / kNumClasses;
    report.mean_f1 += cs.f1 / kNumClasses;
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report, bool include_per_image) {
  using nlohmann::json;
  json classes = json::object();
  for (const auto& [name, cs] : report.per_class) {
    classes[name] = {{"aji", cs.aji}, {"f1", cs.f1}, {"precision", cs.precision}, {"recall", cs.recall}};
  }
  json out{{"classes", classes}, {"aggregate", {{"aji", report.mean_aji}, {"f1", report.mean_f1}}}};
  if (include_per_image) {
    json rows = json::array();
    for (const auto& img : report.per_image) {
      json row{{"id", img.id}};
      for (const auto& [name, a] : img.aji) {
        json matches = json::array();
        for (const auto& m : a.matches) matches.push_back({m.gt, m.pred, m.iou});
        const F1Result& f = img.f1.at(name);
        json f1_matches = json::array();
        for (const auto& m : f.matches) f1_matches.push_back({m.gt, m.pred, m.iou});
        row[name] = {{"aji", a.aji},         {"matches", matches}, {"unmatched_pred", a.unmatched_pred},
                     {"f1", f.f1},           {"precision", f.precision}, {"recall", f.recall},
                     {"f1_matches", f1_matches}};
      }
      rows.push_back(std::move(row));
    }
    out["per_image"] = std::move(rows);
  }
  return out;
}

}  // namespace relseg::metrics
