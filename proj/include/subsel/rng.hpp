#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "subsel/errors.hpp"

// All randomness in the library flows through the helpers in this header so
// that a run is reproducible from its seed alone. std::mt19937_64 output is
// pinned by the standard; the draw algorithms are pinned here:
//
//   uniform_below(g, n)   one 64-bit word per accepted draw, modulo rejection
//   sample_without_replacement(g, pool, k)
//                         partial Fisher-Yates over a copy of the pool,
//                         exactly k accepted draws, result in draw order
//
// Checkpoints store the generator as the standard text serialization.

namespace subsel {

/// Uniform integer in [0, n). Draws 64-bit words from `g`, discards words
/// below 2^64 mod n, returns word % n. Consumes one word per accepted draw.
inline std::uint64_t uniform_below(std::mt19937_64& g, std::uint64_t n) {
  if (n == 0) throw error("uniform_below: n must be positive");
  const std::uint64_t min = (0 - n) % n;  // 2^64 mod n via unsigned wraparound
  std::uint64_t word = g();
  while (word < min) word = g();
  return word % n;
}

/// k distinct elements of `pool` drawn uniformly, returned in draw order.
/// Partial Fisher-Yates: for i in [0, k), swap slot i with slot
/// i + uniform_below(g, n - i).
template <typename T>
std::vector<T> sample_without_replacement(std::mt19937_64& g,
                                          std::span<const T> pool,
                                          std::size_t k) {
  if (k > pool.size())
    throw error("sample_without_replacement: k exceeds pool size");
  std::vector<T> scratch(pool.begin(), pool.end());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(uniform_below(g, scratch.size() - i));
    std::swap(scratch[i], scratch[j]);
  }
  scratch.resize(k);
  return scratch;
}

inline std::string rng_to_string(const std::mt19937_64& g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& state) {
  std::mt19937_64 g;
  std::istringstream is(state);
  is >> g;
  if (!is) throw data_error("invalid serialized RNG state");
  return g;
}

}  // namespace subsel
