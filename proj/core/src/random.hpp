#pragma once

#include <cstdint>

namespace crgrf::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream id for (seed, purpose, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ splitmix64(purpose)) + index);
}

enum StreamPurpose : std::uint64_t {
  kGroveStream = 1,
  kSubsampleStream = 2,
  kHonestyStream = 3,
  kTreeStream = 4,
  kTreatmentStream = 5,
  kReplicateStream = 6,
};

}  // namespace crgrf::detail
