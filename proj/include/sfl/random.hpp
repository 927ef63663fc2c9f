#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace sfl {

/// Seedable generator with platform-independent output.
///
/// The raw stream is std::mt19937_64, whose sequence is fixed by the C++
/// standard. The standard distributions are not (their algorithms differ
/// between library vendors), so every derived quantity is computed here:
///   uniform01  top 24 bits of one draw, scaled by 2^-24, in [0, 1)
///   index(n)   rejection sampling on the top bits, unbiased, in [0, n)
///   normal     Box-Muller on two uniform01 draws (double precision)
///   shuffle    Fisher-Yates from the back using index()
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  float uniform01();
  float uniform(float lo, float hi);
  std::size_t index(std::size_t n);
  float normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; mixes a base seed with stream tags so that
/// derived generators (per client, per epoch, ...) are decorrelated.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b = 0);

/// Identity permutation of [0, n) shuffled by Rng(seed).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace sfl
