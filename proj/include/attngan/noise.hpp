#ifndef ATTNGAN_NOISE_HPP_
#define ATTNGAN_NOISE_HPP_

#include <cstdint>

namespace attngan {

/// splitmix64 finalizer; used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Lattice value noise: random values on the integer grid, blended with a
/// quintic fade. Output in [0, 1).
class ValueNoise {
 public:
  explicit ValueNoise(std::uint64_t seed) : seed_(seed) {}

  double sample(double x, double y) const;

  /// Sum of `octaves` layers, each at `lacunarity`× the frequency and
  /// `gain`× the amplitude of the previous one, rescaled to [0, 1).
  double fractal(double x, double y, int octaves, double lacunarity = 2.0, double gain = 0.5) const;

 private:
  double lattice(std::int64_t ix, std::int64_t iy) const;

  std::uint64_t seed_;
};

inline double smoothstep(double edge0, double edge1, double x) {
  if (edge1 <= edge0) {
    return x < edge0 ? 0.0 : 1.0;
  }
  double t = (x - edge0) / (edge1 - edge0);
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace attngan

#endif  // ATTNGAN_NOISE_HPP_
