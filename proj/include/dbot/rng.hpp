#pragma once

#include <cmath>
#include <cstdint>

namespace dbot {

// Counter-based random stream: draw n is a pure function of (key, n), so
// independent streams never perturb each other.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : key_(mix(seed ^ mix(stream_id + 0x632be59bd9b4e019ULL))) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * counter_++); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller, two draws per sample.
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }
  // Always consumes one sample so stream positions do not depend on sigma.
  double gaussian(double sigma) {
    const double n = gaussian();
    return sigma > 0.0 ? sigma * n : 0.0;
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Stream identifiers; one per noise source.
enum class StreamId : std::uint64_t {
  Lidar = 1,
  Gps = 2,
  Imu = 3,
  Detector = 4,
  ChannelDown = 5,
  ChannelUp = 6,
  Mppi = 7,
};

inline RngStream make_stream(std::uint64_t seed, StreamId id) {
  return RngStream(seed, static_cast<std::uint64_t>(id));
}

}  // namespace dbot
