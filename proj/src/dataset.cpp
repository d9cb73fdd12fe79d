#include "relseg/dataset.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>

#include "relseg/error.hpp"

namespace relseg::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::int64_t> rle_encode(const Mask& mask) {
  std::vector<std::int64_t> out;
  const auto n = static_cast<std::int64_t>(mask.data.size());
  std::int64_t i = 0;
  while (i < n) {
    if (!mask.data[i]) {
      ++i;
      continue;
    }
    const std::int64_t start = i;
    while (i < n && mask.data[i]) ++i;
    out.push_back(start);
    out.push_back(i - start);
  }
  return out;
}

Mask rle_decode(const std::vector<std::int64_t>& rle, int height, int width) {
  if (rle.size() % 2 != 0) throw Error("rle has odd length");
  Mask m(height, width);
  const auto n = static_cast<std::int64_t>(m.data.size());
  std::int64_t end = 0;
  for (std::size_t k = 0; k < rle.size(); k += 2) {
    const std::int64_t start = rle[k], len = rle[k + 1];
    if (start < end || len <= 0 || start + len > n) throw Error("rle run " + std::to_string(k / 2) + " is invalid");
    std::fill_n(m.data.begin() + start, len, 1);
    end = start + len;
  }
  return m;
}

json to_record(const SampleRecord& s, bool with_scores) {
  json instances = json::array();
  for (const auto& inst : s.instances) {
    json j{{"class", class_name(inst.cls)},
           {"rle", rle_encode(inst.mask)},
           {"bbox", {inst.box.x1, inst.box.y1, inst.box.x2, inst.box.y2}}};
    if (with_scores) j["score"] = inst.score;
    instances.push_back(std::move(j));
  }
  json distractors = json::array();
  for (const auto& d : s.distractors) distractors.push_back(rle_encode(d));
  return json{{"id", s.id},
              {"height", s.image.height},
              {"width", s.image.width},
              {"instances", std::move(instances)},
              {"distractors", std::move(distractors)}};
}

SampleRecord from_record(const json& r, std::size_t index) {
  try {
    SampleRecord s;
    s.id = r.at("id").get<std::string>();
    const int h = r.at("height").get<int>(), w = r.at("width").get<int>();
    if (h <= 0 || w <= 0) throw CorruptManifestError(index, "non-positive image size");
    s.image.height = h;
    s.image.width = w;
    for (const auto& ji : r.at("instances")) {
      Instance inst;
      const auto cls = parse_class(ji.at("class").get<std::string>());
      if (!cls) throw CorruptManifestError(index, "unknown class '" + ji.at("class").get<std::string>() + "'");
      inst.cls = *cls;
      inst.mask = rle_decode(ji.at("rle").get<std::vector<std::int64_t>>(), h, w);
      const auto bb = ji.at("bbox").get<std::vector<double>>();
      if (bb.size() != 4) throw CorruptManifestError(index, "bbox must have 4 entries");
      inst.box = Box{bb[0], bb[1], bb[2], bb[3]};
      if (ji.contains("score")) inst.score = ji.at("score").get<double>();
      s.instances.push_back(std::move(inst));
    }
    for (const auto& jd : r.at("distractors")) {
      s.distractors.push_back(rle_decode(jd.get<std::vector<std::int64_t>>(), h, w));
    }
    return s;
  } catch (const CorruptManifestError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptManifestError(index, e.what());
  }
}

Manifest write_dataset(const std::vector<SampleRecord>& samples, const fs::path& root, bool with_scores) {
  fs::create_directories(root / "images");
  std::ofstream out(root / "annotations.jsonl", std::ios::trunc);
  if (!out) throw Error("cannot write " + (root / "annotations.jsonl").string());
  Manifest manifest{root, {}};
  for (const auto& s : samples) {
    if (!s.image.rgb.empty()) write_png(s.image, root / "images" / (s.id + ".png"));
    out << to_record(s, with_scores).dump() << '\n';
    manifest.ids.push_back(s.id);
  }
  if (!out) throw Error("failed writing annotations");
  return manifest;
}

namespace {

std::vector<SampleRecord> read_impl(const fs::path& root, bool with_images) {
  std::ifstream in(root / "annotations.jsonl");
  if (!in) throw Error("cannot read " + (root / "annotations.jsonl").string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorruptManifestError(index, e.what());
    }
    SampleRecord s = from_record(record, index);
    if (with_images) {
      const fs::path png = root / "images" / (s.id + ".png");
      Image img = read_png(png);
      if (img.height != s.image.height || img.width != s.image.width) {
        throw CorruptManifestError(index, "image size disagrees with record");
      }
      s.image = std::move(img);
    }
    out.push_back(std::move(s));
    ++index;
  }
  return out;
}

}  // namespace

std::vector<SampleRecord> read_dataset(const fs::path& root) { return read_impl(root, true); }
std::vector<SampleRecord> read_annotations(const fs::path& root) { return read_impl(root, false); }

void write_png(const Image& image, const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw Error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw Error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw Error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw Error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img(h, w);
  for (int y = 0; y < h; ++y) png_read_row(png, img.rgb.data() + static_cast<std::size_t>(y) * w * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace relseg::dataset
