#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>

namespace nnlimits::rng {

// SplitMix64 finalizer (Stafford mix13 variant).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() { return mix64(state_ += kGolden); }

 private:
  std::uint64_t state_;
};

// xoshiro256++ (Blackman & Vigna). One instance per Monte Carlo trial;
// the state is expanded from a 64-bit key with SplitMix64.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t key) {
    SplitMix64 sm(key);
    for (auto& w : s_) w = sm.next();
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = kGolden;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // 53-bit uniform on [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_;
};

// Derives the key of an independent substream from (master seed, tag, index).
// Pure function of its arguments, so streams can be created in any order.
inline std::uint64_t stream_key(std::uint64_t master, std::uint64_t tag,
                                std::uint64_t index) {
  const std::uint64_t a = mix64(master + kGolden * (tag + 1));
  return mix64(a + kGolden * index);
}

inline Xoshiro256pp make_stream(std::uint64_t master, std::uint64_t tag,
                                std::uint64_t index) {
  return Xoshiro256pp(stream_key(master, tag, index));
}

namespace detail {

// Ziggurat tables for the standard normal (128 layers, Marsaglia & Tsang
// constants). X[0] is the pseudo-edge of the base layer that folds the tail
// area into a rectangle of the common layer area.
struct ZigTables {
  static constexpr int kLayers = 128;
  static constexpr double kR = 3.442619855899;
  static constexpr double kV = 9.91256303526217e-3;

  std::array<double, kLayers + 1> x{};
  std::array<double, kLayers + 1> f{};
  std::array<double, kLayers> ratio{};

  ZigTables() {
    auto pdf = [](double v) { return std::exp(-0.5 * v * v); };
    x[1] = kR;
    x[0] = kV / pdf(kR);
    for (int i = 2; i < kLayers; ++i) {
      x[i] = std::sqrt(-2.0 * std::log(kV / x[i - 1] + pdf(x[i - 1])));
    }
    x[kLayers] = 0.0;
    for (int i = 0; i <= kLayers; ++i) f[i] = pdf(x[i]);
    for (int i = 0; i < kLayers; ++i) ratio[i] = x[i + 1] / x[i];
  }
};

inline const ZigTables kZigTables{};

inline double apply_sign(double v, std::uint64_t sign_bit63) {
  return std::bit_cast<double>(std::bit_cast<std::uint64_t>(v) ^ sign_bit63);
}

}  // namespace detail

// Standard normal deviate via the ziggurat method.
inline double gaussian(Xoshiro256pp& g) {
  const auto& zt = detail::kZigTables;
  for (;;) {
    const std::uint64_t z = g.next();
    const int i = static_cast<int>(z & 127);
    const std::uint64_t sign = (z & 128) << 56;
    const double u = static_cast<double>(z >> 11) * 0x1.0p-53;
    if (u < zt.ratio[i]) return detail::apply_sign(u * zt.x[i], sign);
    if (i == 0) {
      // Tail beyond kR (Marsaglia's exponential rejection).
      double ex, ey;
      do {
        ex = -std::log(1.0 - g.uniform01()) / detail::ZigTables::kR;
        ey = -std::log(1.0 - g.uniform01());
      } while (2.0 * ey < ex * ex);
      return detail::apply_sign(detail::ZigTables::kR + ex, sign);
    }
    const double v = u * zt.x[i];
    const double y = zt.f[i] + g.uniform01() * (zt.f[i + 1] - zt.f[i]);
    if (y < std::exp(-0.5 * v * v)) return detail::apply_sign(v, sign);
  }
}

template <typename Scalar>
inline void fill_gaussian(Scalar* dst, std::size_t count, Xoshiro256pp& g) {
  for (std::size_t k = 0; k < count; ++k)
    dst[k] = static_cast<Scalar>(gaussian(g));
}

}  // namespace nnlimits::rng
