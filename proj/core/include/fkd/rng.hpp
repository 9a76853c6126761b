#ifndef FKD_RNG_HPP_
#define FKD_RNG_HPP_

#include <cstdint>
#include <random>

namespace fkd {

/// Named randomness streams, so independent consumers never share a
/// generator position. Changing one stream leaves the others untouched.
enum class RngStream : std::uint64_t {
  kInit = 1,
  kBatch = 2,
  kMask = 3,
  kSynth = 4,
  kSplit = 5,
  kTest = 6,
};

/// splitmix64 mixing of (base, stream, index) into an engine seed.
inline std::uint64_t derive_seed(std::uint64_t base, RngStream stream,
                                 std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stream) + 1);
  z += 0xbf58476d1ce4e5b9ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t base, RngStream stream,
                                std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(base, stream, index));
}

}  // namespace fkd

#endif  // FKD_RNG_HPP_
