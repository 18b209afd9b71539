#pragma once

#include <array>
#include <cstdint>

namespace homofm::data {

/// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Counter-based generator: the 64-bit seed is the Philox key, the upper
/// counter words hold a 64-bit stream id and the lower words a block index.
/// Streams derived with split() are independent of draw order, so sample i
/// of a dataset is reproducible from (seed, i) alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Generator for a sub-stream; a pure function of (seed, stream, id).
  Rng split(std::uint64_t id) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
};

/// SplitMix64 finalizer, used to derive stream ids.
std::uint64_t mix64(std::uint64_t x);

}  // namespace homofm::data
