#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace prosac {

using Seed = std::uint64_t;

// Asks a tabulated oracle for the run-averaged risk instead of a single run.
inline constexpr Seed kAverageSeed = std::numeric_limits<Seed>::max();

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the tag bytes; used to turn purpose names into stream ids.
constexpr std::uint64_t tag_hash(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent subsidiary seed from (parent, purpose, index):
///   mix64(mix64(parent ^ tag_hash(purpose)) + index)
/// Every random quantity in the engine is reached through this rule, so a
/// single top-level seed reproduces a whole run.
constexpr Seed derive_seed(Seed parent, std::string_view purpose,
                           std::uint64_t index = 0) noexcept {
  return mix64(mix64(parent ^ tag_hash(purpose)) + index);
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit word.
constexpr double to_unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace prosac
