// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace tinyllm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent stream seed for a named stage, so one global seed drives the
// whole pipeline without stages sharing random streams.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stream) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return splitmix64(global_seed ^ splitmix64(h));
}

// Uniform double in [0, 1) from the top 53 bits of a 64-bit hash.
inline double unit_interval(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace tinyllm
