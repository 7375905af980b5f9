#pragma once

// Portable seeded random streams for the simulator.
//
// Every random quantity is drawn from its own stream, keyed by the scenario seed plus a purpose tag
// and the identifiers of the event it belongs to (e.g. beacon source, seqno, receiver). Streams are
// SplitMix64 sequences; normals use Box-Muller. Standard library distributions are not used since
// their output is implementation-defined.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace beaconloc {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

enum class StreamTag : std::uint64_t { jitter = 1, miss_detect = 2, backoff = 3, scenario = 4 };

inline SplitMix64 make_stream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = splitmix64_mix(seed ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64_mix(h ^ static_cast<std::uint64_t>(tag));
  for (auto id : ids) h = splitmix64_mix(h + 0x9e3779b97f4a7c15ULL + id);
  return SplitMix64(h);
}

}  // namespace beaconloc
