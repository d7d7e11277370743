#pragma once

#include <cmath>
#include <cstdint>

namespace nsmc {

/// Counter-based splittable random stream.
///
/// A stream is identified by a 128-bit key derived from the master seed and
/// the path of split() indices that produced it; draws are a pure function of
/// (key, draw counter). Consequences:
///   - split(i) depends only on the key, not on how many draws were made,
///     so child streams are identical no matter when (or on which thread)
///     they are split off;
///   - the same (seed, index path) always yields the bit-identical sequence.
///
/// Single-owner: hand each concurrent consumer its own split stream.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed)
      : key_hi_(mix64(seed ^ 0x243F6A8885A308D3ull)),
        key_lo_(mix64(seed + 0x13198A2E03707344ull)),
        ctr_(0) {}

  /// Deterministic child stream for the given index.
  RngStream split(std::uint64_t index) const {
    RngStream child = *this;
    child.key_hi_ = mix64(key_hi_ ^ mix64(index + 0x9E3779B97F4A7C15ull));
    child.key_lo_ = mix64(key_lo_ + mix64(index ^ 0xD1B54A32D192ED03ull));
    child.ctr_ = 0;
    return child;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_lo_ + (++ctr_) * 0x9E3779B97F4A7C15ull;
    return mix64(mix64(z) ^ key_hi_);
  }

  /// Uniform on [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes exactly two words.
  double next_gaussian() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Exponential(1), used for sorted-uniform generation.
  double next_exponential() { return -std::log1p(-next_double()); }

private:
  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_hi_;
  std::uint64_t key_lo_;
  std::uint64_t ctr_;
};

}  // namespace nsmc
