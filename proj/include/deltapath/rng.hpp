#pragma once

// Counter-based primary-sample-space streams.
//
// Every unit real is a pure function of (seed, domain, pixel, frame, sample, dimension):
//
//   prefix = mix64(seed ^ mix64(domain + 0x632BE59BD9B4E019))
//   prefix = mix64(prefix ^ (px << 32 | py))
//   prefix = mix64(prefix ^ (frame << 32 | sample))
//   bits   = mix64(prefix + (dimension + 1) * 0x9E3779B97F4A7C15) >> 32
//   u      = bits * 2^-32                         in [0, 1 - 2^-32]
//
// mix64 is the splitmix64 finalizer. Only 64-bit integer arithmetic is involved, so the
// sequence is identical on every platform.

#include <array>
#include <cstdint>
#include <string>

#include "deltapath/errors.hpp"

namespace deltapath {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Separates the streams used for different purposes so they never alias.
enum class StreamDomain : std::uint32_t {
  reference = 1,
  delta = 2,
  oracle = 3,
  dither = 4,
  dataset = 5,
  training = 6,
  pilot = 7,
  test = 99,
};

struct StreamKey {
  std::uint64_t seed = 0;
  StreamDomain domain = StreamDomain::reference;
  std::uint32_t px = 0;
  std::uint32_t py = 0;
  std::uint32_t frame = 0;
  std::uint32_t sample = 0;

  constexpr std::uint64_t prefix() const {
    std::uint64_t h =
        mix64(seed ^ mix64(static_cast<std::uint64_t>(domain) + 0x632BE59BD9B4E019ULL));
    h = mix64(h ^ ((static_cast<std::uint64_t>(px) << 32) | py));
    h = mix64(h ^ ((static_cast<std::uint64_t>(frame) << 32) | sample));
    return h;
  }
};

class RandomStream {
 public:
  static constexpr std::uint32_t kMaxDimensions = 1024;

  constexpr RandomStream() = default;
  constexpr explicit RandomStream(const StreamKey& key) : prefix_(key.prefix()) {}

  /// Unit real for an explicit dimension; does not touch the counter.
  static constexpr double at(std::uint64_t prefix, std::uint32_t dimension) {
    const std::uint64_t bits = mix64(prefix + (static_cast<std::uint64_t>(dimension) + 1) *
                                                  0x9E3779B97F4A7C15ULL) >>
                               32;
    return static_cast<double>(bits) * 0x1.0p-32;
  }

  double next_1d() {
    if (dimension_ >= kMaxDimensions) {
      throw StreamExhausted("random stream exceeded " + std::to_string(kMaxDimensions) +
                            " dimensions (runaway path?)");
    }
    return at(prefix_, dimension_++);
  }

  std::array<double, 2> next_2d() {
    const double a = next_1d();
    const double b = next_1d();
    return {a, b};
  }

  /// Jumps the counter. Integrators align each bounce to a fixed dimension block with this.
  void set_dimension(std::uint32_t dimension) { dimension_ = dimension; }
  std::uint32_t dimension() const { return dimension_; }
  std::uint64_t prefix() const { return prefix_; }

  /// Copy with its own counter over the same sequence. Two forks replay identical values.
  RandomStream fork() const { return *this; }

  friend bool operator==(const RandomStream&, const RandomStream&) = default;

 private:
  std::uint64_t prefix_ = 0;
  std::uint32_t dimension_ = 0;
};

enum class SceneVariant { static_scene, dynamic_scene };

/// Fork used by the correlated-difference integrator: both scene variants replay the same
/// hypercube coordinates. The variant is accepted only to make call sites self-describing.
inline RandomStream fork_for_scene(const RandomStream& stream, SceneVariant) { return stream.fork(); }

}  // namespace deltapath
