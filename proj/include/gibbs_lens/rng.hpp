#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace gibbs_lens {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Combine a base seed with stream identifiers into an independent sub-seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Counter-based generator: the i-th output is mix64(key + (i + 1) * golden_gamma).
/// Every draw is defined bit-exactly, so sequences match across platforms and
/// standard libraries (unlike std::normal_distribution and friends).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64();

  /// Uniform on the open interval (0, 1) with 53-bit resolution.
  double uniform();

  /// Standard normal via the Box-Muller transform; values come in pairs.
  double normal();

  /// Uniform integer in [0, n), unbiased. n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Fisher-Yates shuffle driven by CounterRng.
template <typename T>
void shuffle(std::span<T> items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace gibbs_lens
