#include "attngan/noise.hpp"

#include <cmath>

namespace attngan {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double ValueNoise::lattice(std::int64_t ix, std::int64_t iy) const {
  const auto h = mix_seed(mix_seed(seed_, static_cast<std::uint64_t>(ix)), static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double ValueNoise::sample(double x, double y) const {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  auto fade = [](double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); };
  const double u = fade(x - fx);
  const double v = fade(y - fy);
  const double a = lattice(ix, iy);
  const double b = lattice(ix + 1, iy);
  const double c = lattice(ix, iy + 1);
  const double d = lattice(ix + 1, iy + 1);
  const double top = a + (b - a) * u;
  const double bottom = c + (d - c) * u;
  return top + (bottom - top) * v;
}

double ValueNoise::fractal(double x, double y, int octaves, double lacunarity, double gain) const {
  double sum = 0.0;
  double norm = 0.0;
  double amplitude = 1.0;
  double frequency = 1.0;
  for (int o = 0; o < octaves; ++o) {
    // Offset each octave so lattice points do not line up across octaves.
    sum += amplitude * sample(x * frequency + 17.31 * o, y * frequency + 5.77 * o);
    norm += amplitude;
    amplitude *= gain;
    frequency *= lacunarity;
  }
  return sum / norm;
}

}  // namespace attngan
