#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace ehrlich {

/// Named substreams. Every random artifact draws from its own stream so that
/// changing how much randomness one artifact consumes never shifts another.
enum class StreamTag : std::uint64_t {
  kTransitionLogits = 1,
  kRowPermutation = 2,
  kMotifs = 3,
  kOffsets = 4,
  kInitialSolution = 5,
  kMutation = 16,
  kRecombination = 17,
  kSelection = 18,
  kProposal = 32,
  kFilter = 33,
  kSampling = 48,
};

/// SplitMix64 finalizer, used to fold stream coordinates into a Philox key.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator (Philox4x32-10, Salmon et al. 2011).
///
/// A stream is identified by a key derived from (seed, tag, indices...). The
/// i-th block of output is a pure function of (key, i), so streams can be
/// created anywhere (e.g. one per particle per step) without coordination and
/// the results do not depend on evaluation order or thread count.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamTag tag,
               std::initializer_list<std::uint64_t> indices = {}) noexcept;

  std::uint64_t next_u64() noexcept;
  std::uint32_t next_u32() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Standard normal via Box-Muller; deterministic across platforms up to
  /// libm rounding of log/cos.
  double normal() noexcept;

  /// Standard exponential.
  double exponential() noexcept;

  std::uint64_t key() const noexcept { return key_; }

 private:
  void refill() noexcept;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int available_ = 0;
};

/// Raw Philox4x32-10 bijection, exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

template <typename T>
void shuffle(std::span<T> items, RandomStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace ehrlich
