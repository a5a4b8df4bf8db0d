#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

// Deterministic, splittable random streams.
//
// Training draws measurement noise from substreams keyed by
// (seed, iteration, item, phase, sample), so serial and parallel schedules
// produce bitwise-identical results. Everything here is plain integer
// arithmetic; no libstdc++ distribution objects are involved, which keeps
// draws reproducible across standard library versions.

namespace eprop::rng {

// splitmix64 finalizer (Vigna). Full-avalanche 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {
constexpr std::uint64_t kKeySalt = 0x243F6A8885A308D3ULL;  // pi fraction

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) noexcept {
  return mix64(h ^ (v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2)));
}
}  // namespace detail

// Order-sensitive key derivation: key(a, b) != key(b, a).
template <typename... Parts>
constexpr std::uint64_t key(std::uint64_t first, Parts... rest) noexcept {
  std::uint64_t h = detail::combine(detail::kKeySalt, first);
  ((h = detail::combine(h, static_cast<std::uint64_t>(rest))), ...);
  return h;
}

// splitmix64 generator. Cheap to construct, one per substream.
class Stream {
 public:
  explicit constexpr Stream(std::uint64_t stream_key) noexcept : state_(stream_key) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  // uniform on [0, 1), 53-bit resolution
  double next_unit() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1]
  double next_unit_open_low() noexcept { return 1.0 - next_unit(); }

  // uniform on (0, hi]
  double next_positive_uniform(double hi) noexcept { return hi * next_unit_open_low(); }

  // standard normal via Box-Muller; the paired draw is cached
  double next_normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit_open_low();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // in-place Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace eprop::rng
