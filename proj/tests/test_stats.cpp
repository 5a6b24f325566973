#include "celltopo/stats.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>

using namespace celltopo;
using celltopo::testing::choose;
using celltopo::testing::random_grid;

namespace {

BitMask random_mask(int h, int w, double p, Rng& rng) {
  BitMask m(h, w);
  std::bernoulli_distribution b(p);
  for (auto& v : m.bits) v = b(rng) ? 1 : 0;
  return m;
}

BitMask subset_mask(int side, const std::vector<int>& on) {
  BitMask m(side, side);
  for (int i : on) m.bits[static_cast<std::size_t>(i)] = 1;
  return m;
}

}  // namespace

TEST(Normalize, SpanningImageIsNearlyUnchanged) {
  Grid img({1, 100, 100});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) / (img.size() - 1);
  Grid out = normalize_image(img);
  // The 1%..99% stretch moves interior values by at most 1/98 of the range.
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out[i], img[i], 0.0102);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[img.size() - 1], 1.0);
}

TEST(Normalize, InvariantToBrightnessScale) {
  Rng rng(3);
  Grid img = random_grid({1, 32, 32}, rng, 0.0, 1.0);
  Grid half = img;
  for (double& v : half.values()) v *= 0.5;
  EXPECT_LT(celltopo::testing::max_rel_diff(normalize_image(img), normalize_image(half)), 1e-12);
}

TEST(Normalize, SparseImageUsesFullRange) {
  Grid img({1, 64, 64}, 0.1);
  img.at(0, 5, 5) = 0.9;
  Grid out = normalize_image(img);
  EXPECT_EQ(out.at(0, 5, 5), 1.0);
  EXPECT_EQ(out.at(0, 0, 0), 0.0);
}

TEST(Normalize, ConstantImageMapsToZero) {
  Grid out = normalize_image(Grid({1, 8, 8}, 0.7));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(CropResize, ForcedWindowAndConstant) {
  Grid c({1, 512, 512}, 0.42);
  Grid out = crop_resize(c, 512, 256, 1);
  ASSERT_EQ(out.shape(), (Grid::Shape{1, 256, 256}));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.42);

  Grid ramp({1, 512, 512});
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) ramp.at(0, y, x) = x + 1000.0 * y;
  Grid r = crop_resize(ramp, 512, 256, 9);
  // Whole image used: output pixel (0,0) averages x,y in {0,1}.
  EXPECT_DOUBLE_EQ(r.at(0, 0, 0), 0.5 + 500.0);
  EXPECT_DOUBLE_EQ(r.at(0, 255, 255), 511.5 - 1.0 + 1000.0 * 510.5);
}

TEST(CropResize, CheckerboardAveragesToHalf) {
  Grid img({1, 1024, 1280});
  for (int y = 0; y < 1024; ++y)
    for (int x = 0; x < 1280; ++x) img.at(0, y, x) = ((x + y) % 2 == 0) ? 1.0 : 0.0;
  for (std::uint64_t seed : {1u, 2u, 77u}) {
    Grid out = crop_resize(img, 512, 256, seed);
    for (double v : out.values()) ASSERT_DOUBLE_EQ(v, 0.5);
  }
}

TEST(CropResize, SeededAndChecked) {
  Rng rng(5);
  Grid img = random_grid({1, 600, 700}, rng, 0.0, 1.0);
  EXPECT_TRUE(crop_resize(img, 512, 256, 4) == crop_resize(img, 512, 256, 4));
  EXPECT_TRUE(crop_resize(img, 512, 256, 4) != crop_resize(img, 512, 256, 5));
  EXPECT_THROW(crop_resize(Grid({1, 500, 700}), 512, 256, 1), std::invalid_argument);
  EXPECT_THROW(crop_resize(img, 500, 256, 1), std::invalid_argument);
}

TEST(CellMask, Boundaries) {
  EXPECT_EQ(cell_mask(Grid({1, 16, 16}), ThresholdConfig{}).count(), 0);
  Rng rng(8);
  Grid img = random_grid({1, 16, 16}, rng, 0.0, 1.0);
  EXPECT_EQ(cell_mask(img, ThresholdConfig{0.0, 0.0}).count(), 256);
}

TEST(CellMask, DropsSmallComponents) {
  Grid img({1, 32, 32});
  img.at(0, 2, 2) = 1.0;  // isolated speck
  for (int y = 10; y < 16; ++y)
    for (int x = 10; x < 16; ++x) img.at(0, y, x) = 1.0;
  BitMask m = cell_mask(img, ThresholdConfig{0.25, 4.0});
  EXPECT_FALSE(m.at(2, 2));
  EXPECT_EQ(m.count(), 36);
  auto comps = connected_components(m);
  ASSERT_EQ(comps.size(), 1u);
  // Diagonal neighbours are connected.
  BitMask d(4, 4);
  d.set(0, 0);
  d.set(1, 1);
  d.set(3, 3);
  EXPECT_EQ(connected_components(d).size(), 2u);
}

TEST(CellMask, MinimumAreaMatchesFiveMicronDisc) {
  const ThresholdConfig c = ThresholdConfig::for_frame(FrameConfig{});
  EXPECT_NEAR(c.min_area_px, std::numbers::pi * std::pow(2.5 * 256 / 500.0, 2), 1e-12);
  EXPECT_DOUBLE_EQ(c.tau, 0.25);
}

TEST(Sections, EmptyFullAndCounts) {
  BitMask empty(256, 256), full(256, 256);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  EXPECT_EQ(section_occupancy(empty).occupied_count(), 0);
  EXPECT_EQ(section_occupancy(full).occupied_count(), 256);
  EXPECT_THROW(section_occupancy(empty, 15), std::invalid_argument);
  BitMask one(64, 64);
  one.set(5, 9);
  auto occ = section_occupancy(one, 16);
  EXPECT_EQ(occ.occupied_count(), 1);
  EXPECT_EQ(occ.counts[1 * 16 + 2], 1);
  EXPECT_EQ(section_occupancy(one, 16, 2).occupied_count(), 0);
}

TEST(Sections, TenMicronDiscInsideOneSection) {
  TopographySpec disc;
  disc.kind = PatternKind::kFilledCircles;
  disc.radii_um = {5.0};
  // Centre of section (row 7, col 9); sections are 500/16 um wide.
  const double sec = 500.0 / 16;
  disc.points_um = {{(9 + 0.5) * sec - 250.0, (7 + 0.5) * sec - 250.0}};
  auto r = rasterize(disc, FrameConfig{});
  Grid img = r.values;
  BitMask m = cell_mask(normalize_image(img), ThresholdConfig::for_frame(FrameConfig{}));
  EXPECT_GT(m.count(), 0);
  auto occ = section_occupancy(m, 16);
  EXPECT_EQ(occ.occupied_count(), 1);
  EXPECT_TRUE(occ.occupied[7 * 16 + 9]);
}

TEST(Hypergeom, SmallWorkedExample) {
  EXPECT_NEAR(hypergeom_pmf(10, 4, 5, 2), 120.0 / 252.0, 1e-15);
  EXPECT_NEAR(hypergeom_tail(10, 4, 5, 2), 186.0 / 252.0, 1e-15);
  EXPECT_EQ(hypergeom_tail(10, 4, 5, 0), 1.0);
  EXPECT_NEAR(hypergeom_pmf(7, 7, 7, 7), 1.0, 1e-15);
  EXPECT_EQ(hypergeom_pmf(10, 4, 5, 5), 0.0);
  EXPECT_THROW(hypergeom_pmf(10, 11, 5, 2), std::invalid_argument);
  EXPECT_THROW(hypergeom_pmf(0, 0, 0, 0), std::invalid_argument);
}

// Every n-subset of an N-set against the fixed marked set {0..K-1}.
TEST(Hypergeom, MatchesSubsetEnumeration) {
  for (int N = 1; N <= 12; ++N)
    for (int K = 0; K <= N; ++K)
      for (int n = 0; n <= N; ++n) {
        std::vector<std::uint64_t> hits(static_cast<std::size_t>(N + 1), 0);
        const unsigned marked = (1u << K) - 1u;
        for (unsigned s = 0; s < (1u << N); ++s) {
          if (std::popcount(s) != n) continue;
          ++hits[static_cast<std::size_t>(std::popcount(s & marked))];
        }
        const std::uint64_t total = choose(N, n);
        std::uint64_t above = total;
        double prev_tail = 2.0;
        for (int k = 0; k <= N; ++k) {
          const double pmf = hypergeom_pmf(N, K, n, k);
          EXPECT_EQ(std::llround(pmf * static_cast<double>(total)), static_cast<long long>(hits[static_cast<std::size_t>(k)]));
          EXPECT_NEAR(pmf, static_cast<double>(hits[static_cast<std::size_t>(k)]) / total, 1e-14);
          const double tail = hypergeom_tail(N, K, n, k);
          EXPECT_NEAR(tail, static_cast<double>(above) / total, 1e-14) << N << ' ' << K << ' ' << n << ' ' << k;
          EXPECT_LE(tail, prev_tail);
          prev_tail = tail;
          above -= hits[static_cast<std::size_t>(k)];
        }
      }
}

TEST(Hypergeom, NormalizedForLargeN) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const long N = std::uniform_int_distribution<long>(1, 300)(rng);
    const long K = std::uniform_int_distribution<long>(0, N)(rng);
    const long n = std::uniform_int_distribution<long>(0, N)(rng);
    double s = 0.0;
    for (long k = 0; k <= std::min(K, n); ++k) s += hypergeom_pmf(N, K, n, k);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
}

// Reference values from exact rational arithmetic.
TEST(Hypergeom, FrozenExactReferences) {
  const double extreme = hypergeom_tail(256, 40, 40, 40);
  EXPECT_GT(extreme, 0.0);
  EXPECT_LT(extreme, 1e-30);
  EXPECT_NEAR(extreme / 9.530957784013765e-48, 1.0, 1e-10);
  EXPECT_NEAR(hypergeom_tail(256, 60, 50, 25) / 3.362262724306411e-06, 1.0, 1e-12);
  EXPECT_NEAR(hypergeom_tail(256, 60, 50, 12) / 0.5243180289379239, 1.0, 1e-12);
  EXPECT_NEAR(hypergeom_tail(256, 100, 90, 40) / 0.12208589562257274, 1.0, 1e-12);
  EXPECT_NEAR(binomial_tail(256, 60, 50, 25) / 3.9468692635314394e-05, 1.0, 1e-10);
}

TEST(Hypergeom, ConservativeUnderNull) {
  Rng rng(21);
  std::vector<int> ids(256);
  std::iota(ids.begin(), ids.end(), 0);
  for (auto [K, n] : std::vector<std::pair<int, int>>{{40, 50}, {10, 12}, {120, 100}}) {
    const int draws = 10000;
    int below[3] = {0, 0, 0};
    const double alphas[3] = {0.01, 0.05, 0.1};
    for (int d = 0; d < draws; ++d) {
      std::shuffle(ids.begin(), ids.end(), rng);
      std::vector<std::uint8_t> a(256, 0), b(256, 0);
      for (int i = 0; i < K; ++i) a[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] = 1;
      std::shuffle(ids.begin(), ids.end(), rng);
      for (int i = 0; i < n; ++i) b[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] = 1;
      long k = 0;
      for (int i = 0; i < 256; ++i) k += a[static_cast<std::size_t>(i)] & b[static_cast<std::size_t>(i)];
      const double p = hypergeom_tail(256, K, n, k);
      for (int j = 0; j < 3; ++j) below[j] += p <= alphas[j];
    }
    for (int j = 0; j < 3; ++j) {
      const double eps = 3.0 * std::sqrt(alphas[j] * (1 - alphas[j]) / draws);
      EXPECT_LE(static_cast<double>(below[j]) / draws, alphas[j] + eps) << K << ' ' << n << ' ' << alphas[j];
    }
  }
}

TEST(Compare, SelfComparisonIsMinimalTail) {
  Rng rng(2);
  BitMask m = random_mask(64, 64, 0.01, rng);
  auto c = compare(m, m);
  EXPECT_EQ(c.k, c.n);
  EXPECT_EQ(c.K, c.n);
  EXPECT_EQ(c.N, 256);
  EXPECT_NEAR(c.p, hypergeom_pmf(256, c.K, c.n, c.k), 1e-15);
}

TEST(Compare, DisjointIsOne) {
  BitMask a(64, 64), b(64, 64);
  for (int x = 0; x < 64; ++x) {
    a.set(3, x);
    b.set(40, x);
  }
  auto c = compare(a, b);
  EXPECT_EQ(c.k, 0);
  EXPECT_EQ(c.p, 1.0);
  EXPECT_EQ(pixel_level_p(a, b).p, 1.0);
  EXPECT_THROW(compare(a, BitMask(32, 32)), std::invalid_argument);
}

TEST(Compare, SymmetricAndCompositeAccounting) {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    BitMask a = random_mask(64, 64, 0.02 + 0.01 * t, rng), b = random_mask(64, 64, 0.05, rng);
    auto ab = compare(a, b), ba = compare(b, a);
    EXPECT_DOUBLE_EQ(ab.p, ba.p);
    EXPECT_LE(ab.k, std::min(ab.K, ab.n));
    EXPECT_GE(ab.k, std::max(0L, ab.n + ab.K - ab.N));
    EXPECT_GT(ab.p, 0.0);
    long red = 0, green = 0, blue = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const std::uint8_t* px = ab.composite.at(x, y);
        red += px[0] == 255;
        green += px[1] == 255;
        blue += px[2] == 255;
      }
    EXPECT_EQ(blue + green, a.count());
    EXPECT_EQ(red + green, b.count());
  }
}

TEST(PixelLevel, IdenticalMasksAreHighlySignificant) {
  Rng rng(4);
  BitMask m = random_mask(64, 64, 0.1, rng);
  auto c = pixel_level_p(m, m);
  EXPECT_EQ(c.N, 4096);
  EXPECT_LT(c.p, 1e-10);
  EXPECT_GT(c.p, 0.0);
  EXPECT_LT(c.p_binomial, 1e-10);
  EXPECT_LT(c.log10_p, -300);
}

TEST(Report, StarsAndCsv) {
  EXPECT_EQ(significance_stars(0.0005), "***");
  EXPECT_EQ(significance_stars(0.005), "**");
  EXPECT_EQ(significance_stars(0.055), "");
  auto dir = std::filesystem::temp_directory_path() / "celltopo_report";
  std::filesystem::create_directories(dir);
  write_comparison_csv(dir / "r.csv", {{"img0", 256, 30, 25, 12, 1e-4, 1e-9}});
  std::string text = read_text_file(dir / "r.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "image_id,N,K,n,k,p_section,p_pixel");
  EXPECT_NE(text.find("img0,256,30,25,12,"), std::string::npos);
  EXPECT_NE(comparison_report({{"img0", 256, 30, 25, 12, 1e-4, 0.004}}).find("***"), std::string::npos);
}
