#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace relseg {

// 64-bit FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// Independent generator for a named consumer, so adding or removing one
// consumer leaves every other stream unchanged.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::string_view tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(tag)), static_cast<std::uint32_t>(fnv1a(tag) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace relseg
