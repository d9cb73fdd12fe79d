#include "relseg/training/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "relseg/error.hpp"

namespace relseg::training {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > (1ull << 30)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) fail("truncated file");
  }
  [[noreturn]] void fail(const std::string& what) const { throw CheckpointError(path_ + ": " + what); }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nn::ParamStore& store, const nlohmann::json& config,
                     int iteration) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put_string(out, config.dump());
    put<std::int64_t>(out, iteration);
    put<std::uint64_t>(out, store.params().size());
    for (const auto& p : store.params()) {
      put_string(out, p.name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(p.var.rank()));
      for (int d : p.var.shape()) put<std::int32_t>(out, d);
      const auto data = p.var.data();
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    }
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof(kMagic)];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("not a checkpoint file");
  if (r.get<std::uint32_t>() != kVersion) r.fail("unsupported version");
  Checkpoint ck;
  try {
    ck.config = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad config snapshot: ") + e.what());
  }
  ck.iteration = static_cast<int>(r.get<std::int64_t>());
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("implausible rank for " + a.name);
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::int32_t>();
      if (d < 0) r.fail("negative dimension for " + a.name);
      a.shape.push_back(d);
    }
    a.values.resize(ag::numel(a.shape));
    r.read(reinterpret_cast<char*>(a.values.data()), a.values.size() * sizeof(double));
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

void load_parameters(const Checkpoint& ck, nn::ParamStore& store) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : ck.arrays) by_name[a.name] = &a;
  std::vector<std::string> problems;
  for (const auto& p : store.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      problems.push_back(p.name + " (missing)");
    } else if (it->second->shape != p.var.shape()) {
      problems.push_back(p.name + " (shape " + ag::to_string(it->second->shape) + " vs " +
                         ag::to_string(p.var.shape()) + ")");
    }
  }
  for (const auto& a : ck.arrays) {
    if (!store.find(a.name)) problems.push_back(a.name + " (unexpected)");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& s : problems) msg += " " + s;
    throw CheckpointError(msg);
  }
  for (auto& p : store.params()) {
    const auto& src = by_name.at(p.name)->values;
    std::copy(src.begin(), src.end(), p.var.mutable_data().begin());
  }
}

}  // namespace relseg::training
