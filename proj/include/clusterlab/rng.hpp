#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>

namespace clusterlab {

// Philox4x32-10 counter-based generator (Salmon et al., Random123).
// A stream is identified by (seed, replication, block); the draw index is the
// low 64 bits of the counter, so every variate is a pure function of
// (seed, replication, block, index).
class Philox4x32 {
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter round_function(Counter ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

  static Counter make_counter(std::uint64_t index, std::uint64_t block, std::uint64_t replication) {
    return {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
            static_cast<std::uint32_t>(block) ^ (static_cast<std::uint32_t>(block >> 32) * 0x85EBCA6Bu),
            static_cast<std::uint32_t>(replication) ^ (static_cast<std::uint32_t>(replication >> 32) * 0xC2B2AE35u)};
  }
  static Key make_key(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

// Sequential view of one Philox stream. Cheap to construct; no shared state.
class RandomStream {
public:
  RandomStream(std::uint64_t seed, std::uint64_t replication, std::uint64_t block = 0)
      : key_(Philox4x32::make_key(seed)),
        rep_(replication), block_(block) {}

  std::uint64_t next_u64() {
    if (avail_ == 0) refill();
    --avail_;
    const std::size_t i = 2 * static_cast<std::size_t>(1 - avail_);
    return (static_cast<std::uint64_t>(buf_[i + 1]) << 32) | buf_[i];
  }

  // Uniform on the open interval (0, 1) with 53-bit resolution.
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Pareto(alpha) on [1, inf): P(X > x) = x^{-alpha}.
  double pareto(double alpha) {
    const double u = uniform();
    return alpha == 1.0 ? 1.0 / u : std::pow(u, -1.0 / alpha);
  }

  // Number of failures before the first success in Bernoulli(p) trials.
  std::uint64_t geometric_failures(double p) {
    if (p >= 1.0) return 0;
    const double g = std::floor(std::log(uniform()) / std::log1p(-p));
    return g >= 1.8e19 ? std::numeric_limits<std::uint64_t>::max() : static_cast<std::uint64_t>(g);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t uniform_index(std::uint64_t n) {
    // Lemire-style multiply-high; bias below 2^-64 * n is irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint64_t draws() const { return index_; }

private:
  void refill() {
    buf_ = Philox4x32::round_function(Philox4x32::make_counter(index_, block_, rep_), key_);
    ++index_;
    avail_ = 2;
  }

  Philox4x32::Key key_;
  std::uint64_t rep_;
  std::uint64_t block_;
  std::uint64_t index_ = 0;
  Philox4x32::Counter buf_{};
  int avail_ = 0;
};

// Stateless helper: uniform variate at a fixed position of a stream. Used for
// random-access innovations (moving maxima) where Z_t is addressed by t.
inline std::array<double, 2> uniform_pair_at(std::uint64_t seed, std::uint64_t replication, std::uint64_t block,
                                             std::uint64_t index) {
  const auto out = Philox4x32::round_function(Philox4x32::make_counter(index, block, replication),
                                              Philox4x32::make_key(seed));
  const std::uint64_t a = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
  const std::uint64_t b = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
  return {(static_cast<double>(a >> 11) + 0.5) * 0x1.0p-53, (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53};
}

// Derives a child seed; used when an operation needs several independent
// stream families under one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

} // namespace clusterlab
