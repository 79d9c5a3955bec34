#pragma once

#include <cstdint>
#include <string_view>

namespace regopt {

/// Counter-based generator: the n-th draw is a pure function of (seed, stream, n).
///
/// Draw order is part of the contract: every sampler documents how many
/// draws it consumes and in which order, so results are reproducible across
/// platforms and independent of any other stream.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) noexcept;
  Rng(std::uint64_t seed, std::string_view stream_name, std::uint64_t index = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Child stream derived from this stream's identity (not its position).
  Rng fork(std::string_view name, std::uint64_t index = 0) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t hash_name(std::string_view name) noexcept;
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace regopt
