#include "celltopo/selftest.hpp"

#include "celltopo/random.hpp"
#include "celltopo/stats.hpp"
#include "celltopo/tape.hpp"
#include "celltopo/wnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace celltopo {

namespace {

Grid random_grid(Grid::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Grid g(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : g.values()) v = u(rng);
  return g;
}

double rel_diff(const Grid& a, const Grid& b) {
  if (!a.same_shape(b)) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(a[i] - b[i]) / std::max({std::fabs(a[i]), std::fabs(b[i]), 1.0}));
  }
  return worst;
}

double dot(const Grid& a, const Grid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Grid loop_conv(const Grid& x, const Grid& k, ConvGeometry g) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2), O = k.dim(0), K = k.dim(2);
  const int Ho = g.output_extent(H, K), Wo = g.output_extent(W, K);
  Grid y({O, Ho, Wo});
  for (int o = 0; o < O; ++o)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double s = 0.0;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int iy = oy * g.stride + ky - g.pad_lo, ix = ox * g.stride + kx - g.pad_lo;
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                s += x.at(c, iy, ix) * k[((static_cast<std::size_t>(o) * C + c) * K + ky) * K + kx];
              }
            }
        y.at(o, oy, ox) = s;
      }
  return y;
}

template <typename F>
CheckResult check(const std::string& name, F&& body) {
  CheckResult r{name, false, ""};
  try {
    std::ostringstream detail;
    r.pass = body(detail);
    r.detail = detail.str();
  } catch (const std::exception& e) {
    r.detail = std::string("exception: ") + e.what();
  }
  return r;
}

}  // namespace

std::vector<CheckResult> run_selftest(std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng = make_rng(seed, "selftest");

  out.push_back(check("conv2d matches direct loops", [&](std::ostream& d) {
    std::uniform_int_distribution<int> chan(1, 4), size(4, 9), kern(1, 4), stride(1, 2);
    double worst = 0.0;
    for (int t = 0; t < 40; ++t) {
      const int k = kern(rng), s = stride(rng);
      const ConvGeometry g = s == 1 ? ConvGeometry::same(k) : ConvGeometry{2, 1, 1};
      const Grid x = random_grid({chan(rng), size(rng), size(rng)}, rng);
      const Grid w = random_grid({chan(rng), x.dim(0), k, k}, rng);
      worst = std::max(worst, rel_diff(conv2d(x, w, nullptr, g), loop_conv(x, w, g)));
    }
    d << "max rel diff " << worst;
    return worst <= 1e-12;
  }));

  out.push_back(check("conv2d_transpose is the adjoint of conv2d", [&](std::ostream& d) {
    std::uniform_int_distribution<int> chan(1, 4), half(1, 6);
    double worst = 0.0;
    for (int t = 0; t < 40; ++t) {
      const int a = chan(rng), b = chan(rng), h = half(rng), w = half(rng);
      const Grid x = random_grid({a, 2 * h, 2 * w}, rng), y = random_grid({b, h, w}, rng);
      const Grid k = random_grid({b, a, 4, 4}, rng);
      const double lhs = dot(conv2d(x, k, nullptr, 2, 1), y), rhs = dot(x, conv2d_transpose(y, k, nullptr, 2, 1));
      worst = std::max(worst, std::fabs(lhs - rhs) / std::max(1.0, std::fabs(lhs)));
    }
    d << "max rel diff " << worst;
    return worst <= 1e-12;
  }));

  out.push_back(check("W-Net gradient matches central differences", [&](std::ostream& d) {
    Model g = build_generator(NetConfig{16, 2, 4, 4}, seed);
    std::normal_distribution<double> normal(0.0, 0.4);
    for (Layer& l : g.layers) {
      for (double& v : l.weights.values()) v = normal(rng);
      for (double& v : l.bias.values()) v = 0.1 * normal(rng);
    }
    const Grid x = random_grid({3, 16, 16}, rng, 0.0, 1.0), w = random_grid({1, 16, 16}, rng);
    Tape tape;
    std::vector<Var> params;
    Var loss = sum(mul(forward(g, tape, tape.input(x), true, &params), tape.input(w)));
    tape.backward(loss);
    auto refs = g.params();
    double worst = 0.0;
    for (int t = 0; t < 40; ++t) {
      const auto p = std::uniform_int_distribution<std::size_t>(0, refs.size() - 1)(rng);
      Grid& value = *refs[p].value;
      const auto i = std::uniform_int_distribution<std::size_t>(0, value.size() - 1)(rng);
      const double analytic = tape.grad(params[p])[i], h = 1e-5, saved = value[i];
      value[i] = saved + h;
      const double up = dot(evaluate(g, x), w);
      value[i] = saved - h;
      const double down = dot(evaluate(g, x), w);
      value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-3}));
    }
    d << "max rel error " << worst;
    return worst <= 1e-4;
  }));

  out.push_back(check("hypergeometric tail matches subset enumeration", [&](std::ostream& d) {
    long mismatches = 0, cases = 0;
    for (int N = 1; N <= 10; ++N) {
      for (int K = 0; K <= N; ++K) {
        // Marked items are 0..K-1; count draws of each size by overlap.
        std::vector<std::vector<double>> counts(static_cast<std::size_t>(N + 1), std::vector<double>(N + 2, 0.0));
        for (unsigned s = 0; s < (1u << N); ++s) {
          const int n = std::popcount(s), k = std::popcount(s & ((1u << K) - 1));
          counts[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] += 1;
        }
        for (int n = 0; n <= N; ++n) {
          double total = 0.0;
          for (double c : counts[static_cast<std::size_t>(n)]) total += c;
          for (int k = 0; k <= n; ++k) {
            double tail = 0.0;
            for (int j = k; j <= n; ++j) tail += counts[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)];
            const double pmf = counts[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)] / total;
            ++cases;
            if (std::fabs(hypergeom_pmf(N, K, n, k) - pmf) > 1e-14 ||
                (tail > 0 && std::fabs(hypergeom_tail(N, K, n, k) - tail / total) > 1e-14)) {
              ++mismatches;
            }
          }
        }
      }
    }
    d << cases << " cases, " << mismatches << " mismatches";
    return mismatches == 0;
  }));

  out.push_back(check("architecture shape contract", [&](std::ostream& d) {
    const NetConfig full;
    Model g = build_generator(full, seed), disc = build_discriminator(full, seed);
    int bottlenecks = 0;
    for (const Layer& l : g.layers) bottlenecks += (l.kind == LayerKind::kConv && l.out_size == 1) ? 1 : 0;
    int disc_final = 0;
    for (const Layer& l : disc.layers)
      if (l.kind == LayerKind::kConv) disc_final = l.out_size;
    Model desk = build_generator(NetConfig::desk(), seed);
    d << "R=256: " << g.conv_layer_count() << " conv layers, " << bottlenecks << " 1x1 bottlenecks, discriminator "
      << disc_final << "x" << disc_final << "; R=64: " << desk.conv_layer_count() << " conv layers";
    return g.conv_layer_count() == 34 && bottlenecks == 2 && disc_final == 32 && desk.conv_layer_count() == 26;
  }));
  return out;
}

}  // namespace celltopo
