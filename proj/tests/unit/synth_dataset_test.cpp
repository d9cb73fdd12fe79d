#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "relseg/dataset.hpp"
#include "relseg/error.hpp"
#include "relseg/synth.hpp"
#include "test_util.hpp"

using namespace relseg;
namespace fs = std::filesystem;

namespace {

synth::SceneSpec small_spec(std::uint64_t seed) {
  synth::SceneSpec s;
  s.image_size = 128;
  s.n_clumps = 2;
  s.cells_per_clump_min = 1;
  s.cells_per_clump_max = 3;
  s.cell_radius_min = 10;
  s.cell_radius_max = 18;
  s.rng_seed = seed;
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("relseg_unit_" + name);
  fs::remove_all(p);
  return p;
}

// Tight box computed by scanning, independent of Mask::tight_box.
Box scan_box(const Mask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
      }
  return {double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

}  // namespace

TEST_CASE("empty scene has no instances and a uniform background") {
  auto s = small_spec(1);
  s.n_clumps = 0;
  s.n_distractors = 0;
  const auto r = synth::generate_sample(s);
  CHECK(r.instances.empty());
  CHECK(r.distractors.empty());
  REQUIRE(r.image.height == 128);
  for (int c = 0; c < 3; ++c) {
    const auto v = r.image.rgb[c];
    for (std::size_t i = c; i < r.image.rgb.size(); i += 3) REQUIRE(r.image.rgb[i] == v);
  }
}

TEST_CASE("generation is deterministic in the spec") {
  auto s = small_spec(7);
  CHECK(synth::generate_sample(s) == synth::generate_sample(s));
  auto t = s;
  t.rng_seed = 8;
  CHECK_FALSE(synth::generate_sample(s) == synth::generate_sample(t));
}

TEST_CASE("two-cell clump overlaps at the target IoU") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    synth::SceneSpec s = small_spec(seed);
    s.n_clumps = 1;
    s.cells_per_clump_min = s.cells_per_clump_max = 2;
    s.overlap_target = 0.3;
    s.n_distractors = 0;
    const auto r = synth::generate_sample(s);
    REQUIRE(r.instances.size() == 4);
    std::vector<const Mask*> cyto;
    for (const auto& inst : r.instances)
      if (inst.cls == CellClass::kCytoplasm) cyto.push_back(&inst.mask);
    REQUIRE(cyto.size() == 2);
    std::size_t inter = 0, uni = 0;
    for (std::size_t k = 0; k < cyto[0]->data.size(); ++k) {
      inter += cyto[0]->data[k] & cyto[1]->data[k];
      uni += cyto[0]->data[k] | cyto[1]->data[k];
    }
    const double iou = double(inter) / double(uni);
    CHECK_MESSAGE(iou >= 0.2, "seed " << seed << " iou " << iou);
    CHECK_MESSAGE(iou <= 0.4, "seed " << seed << " iou " << iou);
  }
}

TEST_CASE("generated samples satisfy the record invariants") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    auto s = small_spec(100 + seed);
    s.cells_per_clump_min = 2;
    const auto r = synth::generate_sample(s);
    std::vector<const Mask*> cyto;
    for (const auto& inst : r.instances) {
      REQUIRE(inst.mask.area() >= 1);
      CHECK(inst.box == scan_box(inst.mask));
      if (inst.cls == CellClass::kCytoplasm) cyto.push_back(&inst.mask);
    }
    for (const auto& inst : r.instances) {
      if (inst.cls != CellClass::kNucleus) continue;
      int parents = 0;
      for (const Mask* c : cyto) parents += is_subset(inst.mask, *c);
      CHECK(parents == 1);
    }
    // Overlap existence: some pixel belongs to two cytoplasm instances.
    bool shared = false;
    for (std::size_t k = 0; k < cyto[0]->data.size() && !shared; ++k) {
      int owners = 0;
      for (const Mask* c : cyto) owners += c->data[k];
      shared = owners >= 2;
    }
    CHECK(shared);
    for (const auto& d : r.distractors) CHECK_FALSE(d.empty());
  }
}

TEST_CASE("infeasible placement raises after the retry budget") {
  synth::SceneSpec s;
  s.image_size = 64;
  s.n_clumps = 10;
  s.cells_per_clump_min = s.cells_per_clump_max = 1;
  s.cell_radius_min = 20;
  s.cell_radius_max = 24;
  s.overlap_target = 0.0;
  CHECK_THROWS_AS(synth::generate_sample(s), InfeasibleSpecError);
}

TEST_CASE("invalid spec fields are rejected by name") {
  auto s = small_spec(0);
  s.nucleus_ratio = 1.0;
  CHECK_THROWS_WITH_AS(synth::generate_sample(s), doctest::Contains("nucleus_ratio"), ConfigError);
  s = small_spec(0);
  s.overlap_target = 0.8;
  CHECK_THROWS_WITH_AS(synth::generate_sample(s), doctest::Contains("overlap_target"), ConfigError);
  s = small_spec(0);
  s.image_size = 100;
  CHECK_THROWS_AS(synth::generate_sample(s), ConfigError);
}

TEST_CASE("generate_dataset ids and shared prefixes") {
  const auto a = synth::generate_dataset(small_spec(0), 3, 5);
  const auto b = synth::generate_dataset(small_spec(0), 2, 5);
  REQUIRE(a.size() == 3);
  CHECK(a[0].id == "000000");
  CHECK(a[2].id == "000002");
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
}

TEST_CASE("rle of a single pixel at the origin") {
  Mask m(4, 5);
  m.at(0, 0) = 1;
  CHECK(dataset::rle_encode(m) == std::vector<std::int64_t>{0, 1});
  Mask n(4, 5);
  n.at(1, 4) = 1;
  n.at(2, 0) = 1;
  n.at(2, 1) = 1;
  CHECK(dataset::rle_encode(n) == std::vector<std::int64_t>{9, 3});
  CHECK(dataset::rle_encode(Mask(3, 3)).empty());
}

TEST_CASE("rle round-trips and rejects malformed runs") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Mask m = testutil::random_mask(7, 9, rng, 0.4);
    CHECK(dataset::rle_decode(dataset::rle_encode(m), 7, 9) == m);
  }
  CHECK_THROWS_AS(dataset::rle_decode({0}, 2, 2), Error);
  CHECK_THROWS_AS(dataset::rle_decode({2, 1, 0, 1}, 2, 2), Error);
  CHECK_THROWS_AS(dataset::rle_decode({3, 2}, 2, 2), Error);
  CHECK_THROWS_AS(dataset::rle_decode({0, 0}, 2, 2), Error);
}

TEST_CASE("dataset round trip of ten samples") {
  const auto samples = synth::generate_dataset(small_spec(0), 10, 11);
  const fs::path dir = scratch("roundtrip");
  const auto manifest = dataset::write_dataset(samples, dir);
  CHECK(manifest.ids.size() == 10);
  CHECK(fs::exists(dir / "images" / "000003.png"));
  CHECK(dataset::read_dataset(dir) == samples);
  fs::remove_all(dir);
}

TEST_CASE("predicted scores survive a round trip") {
  auto s = synth::generate_sample(small_spec(2), "p");
  for (std::size_t i = 0; i < s.instances.size(); ++i) s.instances[i].score = 0.5 + 0.01 * double(i);
  const fs::path dir = scratch("scores");
  dataset::write_dataset({s}, dir, true);
  const auto back = dataset::read_annotations(dir);
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].instances.size() == s.instances.size());
  for (std::size_t i = 0; i < s.instances.size(); ++i) CHECK(back[0].instances[i].score == s.instances[i].score);
  fs::remove_all(dir);
}

TEST_CASE("empty dataset round trip") {
  const fs::path dir = scratch("empty");
  const auto manifest = dataset::write_dataset({}, dir);
  CHECK(manifest.ids.empty());
  CHECK(dataset::read_dataset(dir).empty());
  fs::remove_all(dir);
}

TEST_CASE("corrupt manifest reports the record index") {
  const auto samples = synth::generate_dataset(small_spec(0), 3, 1);
  const fs::path dir = scratch("corrupt");
  dataset::write_dataset(samples, dir);
  std::vector<std::string> lines;
  {
    std::ifstream in(dir / "annotations.jsonl");
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  REQUIRE(lines.size() == 3);
  lines[2] = "{\"id\": \"000002\", \"height\": 128}";
  {
    std::ofstream out(dir / "annotations.jsonl", std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
  }
  try {
    dataset::read_dataset(dir);
    FAIL("expected CorruptManifestError");
  } catch (const CorruptManifestError& e) {
    CHECK(e.record() == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("png round trip") {
  Image im(5, 7);
  for (std::size_t i = 0; i < im.rgb.size(); ++i) im.rgb[i] = static_cast<std::uint8_t>(i * 37 % 256);
  const fs::path dir = scratch("png");
  fs::create_directories(dir);
  dataset::write_png(im, dir / "a.png");
  CHECK(dataset::read_png(dir / "a.png") == im);
  fs::remove_all(dir);
}
