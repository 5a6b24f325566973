#pragma once

// Test-only reference implementations. They follow the textbook definitions
// directly and share no code with the library paths they check.

#include "celltopo/grid.hpp"
#include "celltopo/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace celltopo::testing {

inline Grid random_grid(Grid::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Grid g(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : g.values()) v = u(rng);
  return g;
}

inline double max_rel_diff(const Grid& a, const Grid& b) {
  if (!a.same_shape(b)) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::fabs(a[i]), std::fabs(b[i]), 1.0});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Four nested loops over output channel, output pixel and the kernel taps.
inline Grid direct_conv2d(const Grid& x, const Grid& k, const Grid* bias, ConvGeometry g) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = k.dim(0), K = k.dim(2);
  const int Ho = (H + g.pad_lo + g.pad_hi - K) / g.stride + 1;
  const int Wo = (W + g.pad_lo + g.pad_hi - K) / g.stride + 1;
  Grid y({O, Ho, Wo});
  for (int o = 0; o < O; ++o)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double s = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int iy = oy * g.stride + ky - g.pad_lo;
              const int ix = ox * g.stride + kx - g.pad_lo;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              s += x.at(c, iy, ix) * k[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx];
            }
        y.at(o, oy, ox) = s;
      }
  return y;
}

// Scatter form: every input pixel stamps its kernel slice onto the output.
inline Grid direct_conv_transpose(const Grid& x, const Grid& k, const Grid* bias, ConvGeometry g) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int O = k.dim(1), K = k.dim(2);
  const int Ho = (H - 1) * g.stride + K - g.pad_lo - g.pad_hi;
  const int Wo = (W - 1) * g.stride + K - g.pad_lo - g.pad_hi;
  Grid y({O, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int iy = 0; iy < H; ++iy)
      for (int ix = 0; ix < W; ++ix)
        for (int o = 0; o < O; ++o)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int oy = iy * g.stride + ky - g.pad_lo;
              const int ox = ix * g.stride + kx - g.pad_lo;
              if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
              y.at(o, oy, ox) += x.at(c, iy, ix) * k[((static_cast<std::size_t>(c) * O + o) * K + ky) * K + kx];
            }
  if (bias)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < Ho * Wo; ++i) y[static_cast<std::size_t>(o) * Ho * Wo + i] += (*bias)[static_cast<std::size_t>(o)];
  return y;
}

// Exact binomial coefficient for small arguments.
inline std::uint64_t choose(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

}  // namespace celltopo::testing
