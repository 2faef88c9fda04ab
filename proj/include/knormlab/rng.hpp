#pragma once

#include <cmath>
#include <cstdint>

namespace knormlab {

// Consumers of randomness. Each gets its own salt so streams never collide.
enum class RngStream : std::uint64_t {
  kInit = 1,          // parameter initialization
  kDropout = 2,       // dropout masks (KNConv, KernelNorm, plain dropout)
  kDpNoise = 3,       // Gaussian noise added to aggregated gradients
  kShuffle = 4,       // epoch data shuffles
  kClientSelect = 5,  // per-round client sampling
  kAugment = 6,       // random-crop offsets
  kSynthetic = 7,     // synthetic dataset generation
  kPartition = 8,     // label-shard dealing
  kGeneric = 9,
};

// Counter-based RNG: every draw is a pure function of
// (seed, stream, a, b, c, index). Draws are therefore identical regardless
// of thread count or call interleaving, which is what makes dropout masks
// and injected noise reproducible across execution strategies.
//
// Convention for the three stream coordinates: a = layer id, b = step id,
// c = sample id. Consumers that need fewer coordinates pass zeros.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits(RngStream stream, std::uint64_t a, std::uint64_t b,
                     std::uint64_t c, std::uint64_t index) const {
    std::uint64_t h = mix(seed_, static_cast<std::uint64_t>(stream));
    h = mix(h, a);
    h = mix(h, b);
    h = mix(h, c);
    h = mix(h, index);
    return h;
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform(RngStream stream, std::uint64_t a, std::uint64_t b,
                 std::uint64_t c, std::uint64_t index) const {
    return static_cast<double>(bits(stream, a, b, c, index) >> 11) *
           0x1.0p-53;
  }

  // Standard normal draw `index` of the stream. Box-Muller over the
  // sub-draws 2*index and 2*index+1, so consecutive indices are independent.
  double gaussian(RngStream stream, std::uint64_t a, std::uint64_t b,
                  std::uint64_t c, std::uint64_t index) const {
    // u1 in (0, 1] so log(u1) is finite.
    const double u1 =
        (static_cast<double>(bits(stream, a, b, c, 2 * index) >> 11) + 1.0) *
        0x1.0p-53;
    const double u2 = uniform(stream, a, b, c, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  // splitmix64 finalizer; good avalanche, cheap.
  static std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h += 0x9e3779b97f4a7c15ULL + v;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
  }

  std::uint64_t seed_;
};

}  // namespace knormlab
