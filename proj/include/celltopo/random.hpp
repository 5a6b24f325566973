#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace celltopo {

using Rng = std::mt19937_64;

/// Seed for a named purpose stream ("dataset", "init", "training", ...)
/// derived from one run seed, so components can be re-run independently.
inline std::uint64_t stream_seed(std::uint64_t base, std::string_view purpose,
                                 std::uint64_t index = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the purpose tag
  for (char c : purpose) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return mix(mix(base ^ h) + index);
}

inline Rng make_rng(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0) {
  return Rng(stream_seed(base, purpose, index));
}

}  // namespace celltopo
