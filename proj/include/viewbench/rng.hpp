#pragma once

// Platform-independent seeded sampling. The standard distributions are
// implementation-defined, so bounded draws are done by hand on top of the
// (fully specified) mt19937_64 engine.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace viewbench {

inline constexpr std::uint64_t kDefaultSeed = 42;

/// Uniform integer in [0, bound) by rejection; bound > 0.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

/// `count` distinct indices from [0, population), uniformly without
/// replacement, returned in ascending order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                           std::uint64_t seed) {
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= population) return idx;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `count` slots end up a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace viewbench
