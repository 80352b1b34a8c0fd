#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace oodbench {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed for a named purpose (e.g. "s01/ind_split").
/// Stable across platforms and runs: FNV-1a over the name, mixed with the root.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(root) ^ h);
}

inline Rng make_rng(std::uint64_t root, std::string_view purpose) {
  return Rng(derive_seed(root, purpose));
}

}  // namespace oodbench
