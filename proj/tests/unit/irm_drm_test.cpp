#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relseg/detector/boxes.hpp"
#include "relseg/drm.hpp"
#include "relseg/error.hpp"
#include "relseg/irm.hpp"
#include "test_util.hpp"

using namespace relseg;
using ag::Var;
using testutil::random_leaf;
using testutil::random_values;

namespace {

std::vector<double> values(const Var& v) { return {v.data().begin(), v.data().end()}; }

// Brute-force association: per-channel dot products, channel mean, row softmax.
std::pair<std::vector<double>, std::vector<double>> naive_associate(const Var& a) {
  const int n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> pre(n * n, 0.0), w(n * n);
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) {
      double total = 0.0;
      for (int j = 0; j < c; ++j) {
        double dot = 0.0;
        for (int s = 0; s < hw; ++s) dot += a.data()[(p * c + j) * hw + s] * a.data()[(q * c + j) * hw + s];
        total += dot;
      }
      pre[p * n + q] = total / c;
    }
  for (int p = 0; p < n; ++p) {
    double m = -INFINITY, z = 0.0;
    for (int q = 0; q < n; ++q) m = std::max(m, pre[p * n + q]);
    for (int q = 0; q < n; ++q) z += std::exp(pre[p * n + q] - m);
    for (int q = 0; q < n; ++q) w[p * n + q] = std::exp(pre[p * n + q] - m) / z;
  }
  return {pre, w};
}

// Per row: keep the k largest logits (ties to the lower column), softmax over them.
std::vector<double> naive_topk_softmax(const std::vector<double>& logits, int n, int k) {
  std::vector<double> out(n * n, 0.0);
  for (int p = 0; p < n; ++p) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return logits[p * n + a] > logits[p * n + b]; });
    idx.resize(std::min(k, n));
    double m = -INFINITY, z = 0.0;
    for (int q : idx) m = std::max(m, logits[p * n + q]);
    for (int q : idx) z += std::exp(logits[p * n + q] - m);
    for (int q : idx) out[p * n + q] = std::exp(logits[p * n + q] - m) / z;
  }
  return out;
}

std::vector<Box> random_boxes(int n, std::mt19937_64& rng, double extent = 100.0) {
  std::uniform_real_distribution<double> u(0, extent), s(4, 30);
  std::vector<Box> b;
  for (int i = 0; i < n; ++i) {
    const double x = u(rng), y = u(rng);
    b.push_back({x, y, x + s(rng), y + s(rng)});
  }
  return b;
}

}  // namespace

// ---- IRM ------------------------------------------------------------------

TEST_CASE("associate of a single instance is [[1]]") {
  std::mt19937_64 rng(1);
  const auto r = irm::associate(random_leaf({1, 16, 14, 14}, rng));
  CHECK(values(r.weights) == std::vector<double>{1.0});
}

TEST_CASE("associate of identical instances is uniform") {
  std::mt19937_64 rng(2);
  const auto v = random_values(16 * 196, rng);
  std::vector<double> both = v;
  both.insert(both.end(), v.begin(), v.end());
  const auto r = irm::associate(Var::constant({2, 16, 14, 14}, both));
  for (double w : r.weights.data()) CHECK(w == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("associate matches the brute-force oracle and its invariants") {
  std::mt19937_64 rng(3);
  for (int n : {2, 3, 5}) {
    const Var a = random_leaf({n, 16, 14, 14}, rng, 0.1);
    const auto r = irm::associate(a);
    const auto [pre, w] = naive_associate(a);
    for (int i = 0; i < n * n; ++i) {
      CHECK(r.pre_softmax.data()[i] == doctest::Approx(pre[i]).epsilon(1e-10));
      CHECK(std::abs(r.weights.data()[i] - w[i]) < 1e-6);
      CHECK(r.weights.data()[i] > 0.0);
      CHECK(r.weights.data()[i] < 1.0);
    }
    for (int p = 0; p < n; ++p) {
      double row = 0.0;
      for (int q = 0; q < n; ++q) {
        row += r.weights.data()[p * n + q];
        CHECK(std::abs(r.pre_softmax.data()[p * n + q] - r.pre_softmax.data()[q * n + p]) < 1e-5);
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  CHECK_THROWS_AS(irm::associate(Var::zeros({0, 16, 14, 14})), ShapeError);
}

TEST_CASE("parse_messages degenerate cases") {
  std::mt19937_64 rng(4);
  const Var a = random_leaf({3, 16, 14, 14}, rng);
  const auto w = irm::associate(a).weights;
  CHECK(values(irm::parse_messages(a, w, Var::constant({1}, {0.0}))) == values(a));

  const Var one = random_leaf({1, 16, 14, 14}, rng);
  const Var out = irm::parse_messages(one, irm::associate(one).weights, Var::constant({1}, {0.7}));
  for (std::size_t i = 0; i < one.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(1.7 * one.data()[i]).epsilon(1e-12));
}

TEST_CASE("parse_messages matches the brute-force triple loop") {
  std::mt19937_64 rng(5);
  const int n = 3, per = 16 * 196;
  const Var a = random_leaf({n, 16, 14, 14}, rng);
  const Var w = Var::constant({n, n}, naive_associate(random_leaf({n, 16, 14, 14}, rng, 0.1)).second);
  const double gamma = -0.35;
  const Var out = irm::parse_messages(a, w, Var::constant({1}, {gamma}));
  for (int p = 0; p < n; ++p)
    for (int s = 0; s < per; ++s) {
      double msg = 0.0;
      for (int q = 0; q < n; ++q) msg += w.data()[p * n + q] * a.data()[q * per + s];
      CHECK(std::abs(out.data()[p * per + s] - (gamma * msg + a.data()[p * per + s])) < 1e-6);
    }
}

TEST_CASE("parse_messages deviation shrinks linearly with gamma") {
  std::mt19937_64 rng(6);
  const Var a = random_leaf({3, 16, 14, 14}, rng);
  const auto w = irm::associate(a).weights;
  std::vector<double> ratio;
  for (double g : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const Var out = irm::parse_messages(a, w, Var::constant({1}, {g}));
    double dev = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) dev = std::max(dev, std::abs(out.data()[i] - a.data()[i]));
    ratio.push_back(dev / g);
  }
  for (double r : ratio) CHECK(r == doctest::Approx(ratio.front()).epsilon(1e-6));
}

TEST_CASE("encoder input channels follow the flags") {
  nn::ParamStore s1(1), s2(1), s3(1);
  CHECK(irm::InstanceRelationModule(s1, 8, {true, false, true}).encoder_in_channels() == 8);
  CHECK(irm::InstanceRelationModule(s2, 8, {true, true, true}).encoder_in_channels() == 9);
  CHECK(irm::InstanceRelationModule(s3, 8, {false, true, true}).encoder_in_channels() == 1);
  nn::ParamStore s4(1);
  CHECK_THROWS_AS(irm::InstanceRelationModule(s4, 8, {false, false, true}), ConfigError);
  nn::ParamStore s5(1);
  irm::InstanceRelationModule no_rl(s5, 8, {true, true, false});
  CHECK(s5.find("irm.gamma") == nullptr);
}

TEST_CASE("irm encode: empty input, count mismatch and determinism") {
  nn::ParamStore store(2);
  irm::InstanceRelationModule m(store, 4, {}, 0.0);
  const auto empty = m.encode(Var::zeros({0, 4, 14, 14}), Var::zeros({0, 1, 14, 14}));
  CHECK(empty.size() == 0);
  CHECK(m(Var::zeros({0, 4, 14, 14}), Var::zeros({0, 1, 14, 14})).shape() == ag::Shape{0, kNumClasses, 28, 28});
  CHECK_THROWS_AS(m.encode(Var::zeros({2, 4, 14, 14}), Var::zeros({1, 1, 14, 14})), ShapeError);

  std::mt19937_64 rng(2);
  const Var deep = random_leaf({3, 4, 14, 14}, rng), mask = random_leaf({3, 1, 14, 14}, rng);
  const auto a = m.encode(deep, mask), b = m.encode(deep, mask);
  CHECK(a.features.shape() == ag::Shape{3, 16, 14, 14});
  CHECK(values(a.features) == values(b.features));
  CHECK(values(m(deep, mask)) == values(m(deep, mask)));
}

TEST_CASE("irm pipeline is exactly permutation equivariant") {
  std::mt19937_64 rng(3);
  for (int n : {2, 4, 7, 30}) {
    nn::ParamStore store(3);
    irm::InstanceRelationModule m(store, 4, {}, 0.8);
    const Var deep = random_leaf({n, 4, 14, 14}, rng), mask = random_leaf({n, 1, 14, 14}, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto run = [&](const Var& d, const Var& k) {
      const auto set = m.encode(d, k);
      const auto rel = m.associate(set);
      return std::pair{rel.weights, m.parse_messages(set, rel)};
    };
    const auto [w0, base] = run(deep, mask);
    const auto [w1, permuted] = run(ag::index_rows(deep, perm), ag::index_rows(mask, perm));
    const std::size_t per = base.numel() / n;
    std::size_t differ = 0;
    for (int i = 0; i < n; ++i) {
      for (std::size_t s = 0; s < per; ++s) differ += permuted.data()[i * per + s] != base.data()[perm[i] * per + s];
      for (int j = 0; j < n; ++j) differ += w1.data()[i * n + j] != w0.data()[perm[i] * n + perm[j]];
    }
    CHECK(differ == 0);
  }
}

TEST_CASE("refine doubles the spatial size; zero classifier gives ln 2") {
  nn::ParamStore store(4);
  irm::InstanceRelationModule m(store, 4, {}, 0.0);
  std::mt19937_64 rng(4);
  const Var a = random_leaf({2, 16, 14, 14}, rng);
  CHECK(m.refine(a).shape() == ag::Shape{2, kNumClasses, 28, 28});
  for (const char* p : {"irm.classifier.weight", "irm.classifier.bias"}) {
    auto d = store.find(p)->var.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  const Var logits = m.refine(a);
  for (double v : logits.data()) REQUIRE(v == 0.0);
  std::vector<double> target(logits.numel());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i * 7 % 3 == 0) ? 1.0 : 0.0;
  CHECK(ag::bce_with_logits(logits, target).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("irm loss gradient with respect to gamma") {
  nn::ParamStore store(5);
  irm::InstanceRelationModule m(store, 3, {}, 0.3);
  std::mt19937_64 rng(5);
  const Var deep = random_leaf({2, 3, 14, 14}, rng), mask = random_leaf({2, 1, 14, 14}, rng);
  std::vector<double> target(2 * 2 * 28 * 28);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i / 28 + i) % 2;
  auto loss = [&] { return ag::bce_with_logits(m(deep, mask), target); };
  const auto g = testutil::check_gradients(loss, {{"gamma", m.gamma()}});
  CHECK_MESSAGE(g.failed == 0, g.first_failure);
}

TEST_CASE("irm full pipeline gradient check") {
  nn::ParamStore store(6);
  irm::InstanceRelationModule m(store, 2, {}, 0.5);
  std::mt19937_64 rng(6);
  Var deep = random_leaf({3, 2, 14, 14}, rng), mask = random_leaf({3, 1, 14, 14}, rng);
  const std::vector<int> cls{0, 1, 1};
  std::vector<double> target(3 * 28 * 28);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (i % 5) < 2;
  auto loss = [&] { return ag::bce_with_logits(ag::gather_channel(m(deep, mask), cls), target); };
  auto vars = testutil::all_params(store, "irm.");
  vars.emplace_back("deep", deep);
  vars.emplace_back("mask", mask);
  const auto g = testutil::check_gradients(loss, vars, 1e-3, 1e-4, 1e-8);
  CHECK_MESSAGE(g.failed == 0, g.first_failure);
  CHECK(g.checked > 1000);
}

// ---- DRM ------------------------------------------------------------------

namespace {
drm::DrmConfig small_drm(int k = 40) { return {k, 16, 8}; }
}  // namespace

TEST_CASE("sparse relation keeps exactly min(k, n) weights per row") {
  nn::ParamStore store(7);
  drm::DuplicateRemovalModule m(store, 12, small_drm(40));
  std::mt19937_64 rng(7);
  for (int n : {1, 2, 39, 40, 41, 100}) {
    const auto boxes = random_boxes(n, rng);
    const Var app = random_leaf({n, 12}, rng);
    const auto r = m.relate_sparse(app, m.location_embedding(boxes, 128, 128), boxes, 40);
    for (int p = 0; p < n; ++p) {
      int nz = 0;
      double row = 0.0;
      for (int q = 0; q < n; ++q) {
        nz += r.weights.data()[p * n + q] != 0.0;
        row += r.weights.data()[p * n + q];
      }
      CHECK(nz == std::min(40, n));
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("sparse relation matches the sort-then-softmax oracle") {
  nn::ParamStore store(8);
  drm::DuplicateRemovalModule m(store, 12, small_drm());
  std::mt19937_64 rng(8);
  const int n = 5;
  const auto boxes = random_boxes(n, rng);
  const Var app = random_leaf({n, 12}, rng);
  const auto r = m.relate_sparse(app, m.location_embedding(boxes, 128, 128), boxes, 2);
  const auto want = naive_topk_softmax(values(r.logits), n, 2);
  for (int i = 0; i < n * n; ++i) CHECK(std::abs(r.weights.data()[i] - want[i]) < 1e-6);
  for (int p = 0; p < n; ++p) CHECK(std::count_if(want.begin() + p * n, want.begin() + (p + 1) * n, [](double w) { return w != 0; }) == 2);
}

TEST_CASE("sparse relation equals dense when n <= k") {
  nn::ParamStore store(9);
  drm::DuplicateRemovalModule m(store, 12, small_drm());
  std::mt19937_64 rng(9);
  const int n = 7;
  const auto boxes = random_boxes(n, rng);
  const Var app = random_leaf({n, 12}, rng);
  const Var loc = m.location_embedding(boxes, 128, 128);
  const auto sparse = m.relate_sparse(app, loc, boxes, 40);
  const auto dense = naive_topk_softmax(values(sparse.logits), n, n);
  for (int i = 0; i < n * n; ++i) CHECK(std::abs(sparse.weights.data()[i] - dense[i]) < 1e-6);
  const auto exact_k = m.relate_sparse(app, loc, boxes, n);
  for (std::size_t i = 0; i < sparse.attended.numel(); ++i)
    CHECK(std::abs(sparse.attended.data()[i] - exact_k.attended.data()[i]) < 1e-6);
}

TEST_CASE("single proposal attends to itself") {
  nn::ParamStore store(10);
  drm::DuplicateRemovalModule m(store, 12, small_drm());
  std::mt19937_64 rng(10);
  const auto boxes = random_boxes(1, rng);
  const auto r = m.relate_sparse(random_leaf({1, 12}, rng), m.location_embedding(boxes, 128, 128), boxes, 40);
  CHECK(values(r.weights) == std::vector<double>{1.0});
  CHECK(r.attended.shape() == ag::Shape{1, 16});
}

TEST_CASE("drm rejects k < 1 and handles an empty batch") {
  nn::ParamStore store(11);
  drm::DuplicateRemovalModule m(store, 12, small_drm());
  const std::vector<Box> none;
  CHECK_THROWS_AS(m.relate_sparse(Var::zeros({0, 12}), Var::zeros({0, 16}), none, 0), ConfigError);
  const Var out = m(Var::zeros({0, 12}), none, 64, 64);
  CHECK(out.numel() == 0);
  nn::ParamStore s2(1);
  CHECK_THROWS_AS(drm::DuplicateRemovalModule(s2, 12, small_drm(0)), ConfigError);
}

TEST_CASE("zero classifier gives probability one half") {
  nn::ParamStore store(12);
  drm::DuplicateRemovalModule m(store, 12, small_drm());
  for (const char* p : {"drm.classifier.weight", "drm.classifier.bias"}) {
    auto d = store.find(p)->var.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  std::mt19937_64 rng(12);
  const auto boxes = random_boxes(6, rng);
  const Var logits = m(random_leaf({6, 12}, rng), boxes, 128, 128);
  for (double z : logits.data()) CHECK(1.0 / (1.0 + std::exp(-z)) == 0.5);
}

TEST_CASE("drm gradient check over all parameters") {
  nn::ParamStore store(13);
  drm::DuplicateRemovalModule m(store, 6, {2, 8, 8});
  std::mt19937_64 rng(13);
  const auto boxes = random_boxes(4, rng, 40);
  Var app = random_leaf({4, 6}, rng);
  const std::vector<double> labels{1, 0, 0, 1};
  auto loss = [&] { return ag::bce_with_logits(m(app, boxes, 64, 64), labels); };
  auto vars = testutil::all_params(store, "drm.");
  vars.emplace_back("appearance", app);
  const auto g = testutil::check_gradients(loss, vars, 1e-3, 1e-4, 1e-8);
  CHECK_MESSAGE(g.failed == 0, g.first_failure);
}

TEST_CASE("duplicate labels on the hand-computed case") {
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const std::vector<Box> preds{{0, 0, 10, 9}, {0, 0, 10, 8}, {0, 0, 10, 2}};
  CHECK(box_iou(preds[0], gt[0]) == doctest::Approx(0.9));
  CHECK(box_iou(preds[1], gt[0]) == doctest::Approx(0.8));
  CHECK(box_iou(preds[2], gt[0]) == doctest::Approx(0.2));
  CHECK(drm::duplicate_labels(preds, std::vector<double>{0.5, 0.9, 0.9}, gt) == std::vector<int>{1, 0, 0});
}

TEST_CASE("duplicate label ties go to higher score, then lower index") {
  const std::vector<Box> gt{{0, 0, 10, 10}};
  const std::vector<Box> preds{{0, 0, 10, 9}, {0, 1, 10, 10}, {0, 0, 10, 9}};
  CHECK(drm::duplicate_labels(preds, std::vector<double>{0.2, 0.7, 0.7}, gt) == std::vector<int>{0, 1, 0});
  CHECK(drm::duplicate_labels(preds, std::vector<double>{0.5, 0.5, 0.5}, gt) == std::vector<int>{1, 0, 0});
  CHECK(drm::duplicate_labels(preds, std::vector<double>{0.5, 0.5, 0.5}, std::vector<Box>{{50, 50, 60, 60}}) ==
        std::vector<int>{0, 0, 0});
  CHECK(drm::duplicate_labels(std::vector<Box>{}, std::vector<double>{}, gt).empty());
}

TEST_CASE("duplicate labels form a partial matching") {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 200; ++t) {
    const auto preds = random_boxes(8, rng, 40), gts = random_boxes(3, rng, 40);
    const auto scores = random_values(8, rng, 0, 1);
    const auto labels = drm::duplicate_labels(preds, scores, gts);
    const int positives = std::accumulate(labels.begin(), labels.end(), 0);
    CHECK(positives <= static_cast<int>(gts.size()));
    // Each positive is the argmax for at least one ground truth.
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!labels[i]) continue;
      bool best_for_some = false;
      for (const Box& g : gts) {
        bool best = box_iou(preds[i], g) > 0;
        for (std::size_t j = 0; j < preds.size(); ++j) best = best && box_iou(preds[j], g) <= box_iou(preds[i], g);
        best_for_some = best_for_some || best;
      }
      CHECK(best_for_some);
    }
  }
}

TEST_CASE("rescoring with unit duplicate probability reproduces plain nms") {
  std::mt19937_64 rng(15);
  const auto boxes = random_boxes(10, rng, 30);
  drm::DuplicateScoredBatch b{boxes, random_values(10, rng, 0, 1), std::vector<double>(10, 1.0), {}};
  CHECK(drm::rescore_and_nms(b, 0.5) == detector::nms(boxes, b.cls_score, 0.5));
}

TEST_CASE("coincident boxes keep the higher final score") {
  drm::DuplicateScoredBatch b{{{0, 0, 5, 5}, {0, 0, 5, 5}}, {0.9, 1.0}, {1.0, 0.8}, {}};
  CHECK(drm::rescore_and_nms(b, 0.5) == std::vector<int>{0});
  CHECK(b.final_score == std::vector<double>{0.9, 0.8});
}

TEST_CASE("rescoring matches an exhaustive greedy simulation") {
  // IoU(0,1) = IoU(1,2) = 0.6, IoU(0,2) = 1/3; box 3 stands alone.
  const std::vector<Box> boxes{{0, 0, 10, 10}, {0, 2.5, 10, 12.5}, {0, 5, 10, 15}, {30, 30, 40, 40}};
  for (int t = 0; t < 24; ++t) {
    std::vector<double> cls{0.9, 0.8, 0.7, 0.6}, dup{1.0, 1.0, 1.0, 1.0};
    std::vector<int> order{0, 1, 2, 3};
    for (int r = 0; r < t; ++r) std::next_permutation(order.begin(), order.end());
    for (int i = 0; i < 4; ++i) dup[order[i]] = 0.2 + 0.2 * i;
    drm::DuplicateScoredBatch b{boxes, cls, dup, {}};
    const auto got = drm::rescore_and_nms(b, 0.5);

    std::vector<int> idx{0, 1, 2, 3};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int c) { return cls[a] * dup[a] > cls[c] * dup[c]; });
    std::vector<int> want;
    for (int i : idx) {
      bool ok = true;
      for (int k : want) ok = ok && box_iou(boxes[i], boxes[k]) <= 0.5;
      if (ok) want.push_back(i);
    }
    CHECK(got == want);
  }
}

TEST_CASE("rescoring is monotone and bounded") {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 50; ++t) {
    drm::DuplicateScoredBatch b{random_boxes(6, rng), random_values(6, rng, 0, 1), random_values(6, rng, 0.001, 0.999), {}};
    drm::rescore_and_nms(b, 0.5);
    for (int i = 0; i < 6; ++i) {
      CHECK(b.final_score[i] <= std::min(b.cls_score[i], b.dup_prob[i]));
      for (int j = 0; j < 6; ++j)
        if (b.cls_score[i] >= b.cls_score[j] && b.dup_prob[i] >= b.dup_prob[j]) CHECK(b.final_score[i] >= b.final_score[j]);
    }
  }
  drm::DuplicateScoredBatch empty;
  CHECK(drm::rescore_and_nms(empty, 0.5).empty());
}

TEST_CASE("sinusoidal embedding layout") {
  const std::vector<double> v{0.0, 0.01};
  const auto e = drm::sinusoidal_embedding(v, 8);
  REQUIRE(e.size() == 8);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
  CHECK(e[4] == doctest::Approx(std::sin(1.0)));
  CHECK(e[5] == doctest::Approx(std::cos(1.0)));
  CHECK_THROWS_AS(drm::sinusoidal_embedding(v, 6), ShapeError);
  const auto off = drm::geometric_offsets({0, 0, 10, 20}, {5, 10, 25, 30});
  CHECK(off[0] == doctest::Approx(1.0));
  CHECK(off[1] == doctest::Approx(0.5));
  CHECK(off[2] == doctest::Approx(std::log(2.0)));
  CHECK(off[3] == doctest::Approx(0.0));
}
