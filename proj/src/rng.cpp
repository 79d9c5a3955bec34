#include "regopt/rng.hpp"

#include <cmath>
#include <numbers>

#include "regopt/errors.hpp"

namespace regopt {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonScalarOutput: return "NonScalarOutput";
    case ErrorKind::DegenerateHomography: return "DegenerateHomography";
    case ErrorKind::PointAtInfinity: return "PointAtInfinity";
    case ErrorKind::ZeroMatrix: return "ZeroMatrix";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::EmptyDatabase: return "EmptyDatabase";
    case ErrorKind::SamplingExhausted: return "SamplingExhausted";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
  }
  return "Unknown";
}

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a, 64 bit.
std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept
    : seed_(seed), stream_(stream), key_(mix64(mix64(seed) ^ mix64(stream ^ 0xD6E8FEB86659FD93ULL))) {}

Rng::Rng(std::uint64_t seed, std::string_view stream_name, std::uint64_t index) noexcept
    : Rng(seed, mix64(hash_name(stream_name)) ^ index) {}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t n = counter_++;
  return mix64(key_ ^ mix64(n * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  if (n == 0) return 0;
  // Multiply-shift; bias is below 2^-64 * n and irrelevant here.
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double Rng::normal() noexcept {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::string_view name, std::uint64_t index) const noexcept {
  return Rng(seed_, mix64(stream_ ^ hash_name(name)) ^ index);
}

}  // namespace regopt
