#pragma once

#include <charconv>
#include <cstdint>
#include <string>

namespace packedflow {

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

// Independent seed for a named random stream, derived from the user seed
// with the splitmix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace stream {
inline constexpr std::uint64_t init = 0, shuffle = 1, folds = 2, subsample = 3, generator = 4;
inline constexpr std::uint64_t fold_base = 100;
}  // namespace stream

}  // namespace packedflow
