#include "celltopo/image_io.hpp"
#include "celltopo/oracle.hpp"
#include "celltopo/stats.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace celltopo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("celltopo_" + name);
  fs::remove_all(p);
  return p;
}

double angle_gap(double a, double b) {
  const double d = std::fmod(std::fabs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

bool on_machined(const TopographyRaster& r, const Cell& c) {
  const int x = static_cast<int>(c.x_um / r.frame.scale_um), y = static_cast<int>(c.y_um / r.frame.scale_um);
  return r.values.at(0, y, x) >= 0.5;
}

}  // namespace

TEST(Oracle, DensityZeroIsEmpty) {
  for (int day : kCultureDays) {
    auto sim = simulate(rasterize(TopographySpec::lines(10, 20), FrameConfig::desk()), day, 0.0, OracleRules{}, 3);
    EXPECT_TRUE(sim.cells.cells.empty());
    for (double v : sim.image.values.values()) ASSERT_EQ(v, 0.0);
  }
}

TEST(Oracle, RejectsBadDayAndDensity) {
  auto r = rasterize(TopographySpec::blank(), FrameConfig::desk());
  EXPECT_THROW(simulate(r, 2, 0.5, OracleRules{}, 1), std::invalid_argument);
  EXPECT_THROW(simulate(r, 1, 1.5, OracleRules{}, 1), std::invalid_argument);
  EXPECT_THROW(simulate(r, 1, -0.1, OracleRules{}, 1), std::invalid_argument);
  OracleRules bad;
  bad.adhesion_bias = 0.5;
  EXPECT_THROW(simulate(r, 1, 0.5, bad, 1), std::invalid_argument);
}

TEST(Oracle, BlankGlassIsRandomAndUnaligned) {
  const FrameConfig f = FrameConfig::desk();
  auto r = rasterize(TopographySpec::blank(), f);
  long quadrant[4] = {0, 0, 0, 0};
  long total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto sim = simulate(r, 0, 0.5, OracleRules{}, seed);
    for (const Cell& c : sim.cells.cells) {
      EXPECT_FALSE(c.aligned);
      const int q = (c.x_um > f.extent_um() / 2 ? 1 : 0) + (c.y_um > f.extent_um() / 2 ? 2 : 0);
      ++quadrant[q];
      ++total;
    }
  }
  // Chi-square with 3 degrees of freedom; 16.27 is the 0.999 quantile.
  double chi2 = 0.0;
  for (long q : quadrant) chi2 += std::pow(q - total / 4.0, 2) / (total / 4.0);
  EXPECT_LT(chi2, 16.27);
}

TEST(Oracle, OnLineCellsFollowWideGaps) {
  const FrameConfig f = FrameConfig::desk();
  for (double angle : {0.0, 30.0, 90.0, 135.0}) {
    auto r = rasterize(TopographySpec::lines(10, 14, angle), f);
    int on_line = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (const Cell& c : simulate(r, 8, 0.6, OracleRules{}, seed).cells.cells) {
        if (!on_machined(r, c)) continue;
        ++on_line;
        EXPECT_TRUE(c.aligned);
        EXPECT_LE(angle_gap(c.angle_deg, angle), 15.0) << "line angle " << angle;
      }
    }
    EXPECT_GT(on_line, 50);
  }
}

TEST(Oracle, NarrowGapsLeaveOrientationFree) {
  auto r = rasterize(TopographySpec::lines(10, 8, 0), FrameConfig::desk());
  int within = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed)
    for (const Cell& c : simulate(r, 8, 0.6, OracleRules{}, seed).cells.cells) {
      EXPECT_FALSE(c.aligned);
      within += angle_gap(c.angle_deg, 0.0) <= 10.0;
      ++total;
    }
  // Uniform orientations fall in a 20 degree cone a ninth of the time.
  EXPECT_NEAR(static_cast<double>(within) / total, 1.0 / 9.0, 0.05);
}

TEST(Oracle, AlignmentMonotoneInSeparation) {
  const FrameConfig f = FrameConfig::desk();
  for (double w : {7.5, 10.0, 12.0, 25.0})
    for (double angle : {0.0, 45.0, 90.0, 20.0}) {
      bool seen = false;
      for (double s = 1.0; s <= 30.0; s += 1.0) {
        const bool a = configuration_aligned(rasterize(TopographySpec::lines(w, s, angle), f), OracleRules{});
        if (seen) EXPECT_TRUE(a) << w << ' ' << angle << ' ' << s;
        seen = seen || a;
      }
      EXPECT_TRUE(seen);
    }
}

TEST(Oracle, ThresholdSitsAtTheta) {
  const FrameConfig f = FrameConfig::desk();
  for (double w : {7.5, 10.0, 12.0, 25.0}) {
    EXPECT_FALSE(configuration_aligned(rasterize(TopographySpec::lines(w, 10, 0), f), OracleRules{}));
    EXPECT_TRUE(configuration_aligned(rasterize(TopographySpec::lines(w, 12, 0), f), OracleRules{}));
  }
  OracleRules wide;
  wide.theta_align_um = 20.0;
  EXPECT_FALSE(configuration_aligned(rasterize(TopographySpec::lines(10, 18, 0), f), wide));
  EXPECT_TRUE(configuration_aligned(rasterize(TopographySpec::lines(10, 20, 0), f), wide));
}

TEST(Oracle, AdhesionPreferenceIsSignificant) {
  const FrameConfig f = FrameConfig::desk();
  auto r = rasterize(TopographySpec::lines(10, 20, 0), f);
  const double area = machined_fraction(r);
  long on = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    for (const Cell& c : simulate(r, 1, 0.5, OracleRules{}, seed).cells.cells) {
      on += on_machined(r, c);
      ++total;
    }
  EXPECT_GT(static_cast<double>(on) / total, area);
  const long N = 1000000;
  EXPECT_LT(binomial_tail(N, static_cast<long>(std::lround(area * N)), total, on), 0.01);
}

TEST(Oracle, CellCountTracksDensity) {
  const FrameConfig f = FrameConfig::desk();
  auto r = rasterize(TopographySpec::lines(10, 20, 0), f);
  int inside = 0;
  const int sims = 300;
  for (int i = 0; i < sims; ++i) {
    const int day = kCultureDays[static_cast<std::size_t>(i % 4)];
    const double density = 0.1 + 0.8 * (i % 7) / 6.0;
    const double target = expected_cell_count(f, day, density, OracleRules{});
    const auto n = static_cast<double>(simulate(r, day, density, OracleRules{}, static_cast<std::uint64_t>(i)).cells.cells.size());
    inside += std::fabs(n - target) <= 3.0 * std::sqrt(target);
  }
  EXPECT_GE(inside, static_cast<int>(0.99 * sims));
}

TEST(Oracle, CellSetInvariants) {
  const FrameConfig f = FrameConfig::desk();
  TopographySpec s = TopographySpec::lines(12, 16, 30);
  s.compose.push_back(TopographySpec::lines(8, 40, 100));
  auto r = rasterize(s, f);
  const AdhesionMap map = analyze_topography(r, OracleRules{});
  for (std::uint64_t seed = 0; seed < 30; ++seed)
    for (const Cell& c : simulate(r, 30, 0.9, OracleRules{}, seed).cells.cells) {
      ASSERT_GE(c.x_um, 0.0);
      ASSERT_LT(c.x_um, f.extent_um());
      ASSERT_GE(c.y_um, 0.0);
      ASSERT_LT(c.y_um, f.extent_um());
      ASSERT_GE(c.angle_deg, 0.0);
      ASSERT_LT(c.angle_deg, 180.0);
      ASSERT_GT(c.brightness, 0.0);
      ASSERT_LE(c.brightness, 1.0);
      if (c.aligned) {
        const auto i = static_cast<std::size_t>(static_cast<int>(c.y_um / f.scale_um) * f.resolution +
                                                static_cast<int>(c.x_um / f.scale_um));
        ASSERT_TRUE(map.line_like[i]);
        EXPECT_LE(angle_gap(c.angle_deg, map.line_angle_deg[i]), 10.0 + 1e-9);
      }
    }
}

TEST(Oracle, DeterministicPerSeed) {
  auto r = rasterize(TopographySpec::lines(10, 20, 45), FrameConfig::desk());
  auto a = simulate(r, 8, 0.5, OracleRules{}, 99), b = simulate(r, 8, 0.5, OracleRules{}, 99);
  EXPECT_EQ(a.cells, b.cells);
  EXPECT_TRUE(a.image.values == b.image.values);
  EXPECT_NE(a.cells, simulate(r, 8, 0.5, OracleRules{}, 100).cells);
}

TEST(Oracle, LineGlowIsOptional) {
  auto r = rasterize(TopographySpec::lines(10, 20, 0), FrameConfig::desk());
  OracleRules glow;
  glow.line_glow = 0.1;
  auto sim = simulate(r, 1, 0.0, glow, 1);
  EXPECT_NEAR(sim.image.values.at(0, 32, 32), 0.1 * r.values.at(0, 32, 32), 1e-12);
}

// A single rendered cell thresholds to one component holding its centre.
TEST(Oracle, SingleCellMaskMatchesCellSet) {
  const FrameConfig f;
  for (double angle : {0.0, 60.0, 135.0}) {
    CellSet set;
    set.cells.push_back({211.3, 97.6, angle, 3.0, 8.0, 0.7, false});
    Grid img = render_cells(set, f, OracleRules{});
    BitMask m = cell_mask(normalize_image(img), ThresholdConfig::for_frame(f));
    auto comps = connected_components(m);
    ASSERT_EQ(comps.size(), 1u);
    const int centre = static_cast<int>(97.6 / f.scale_um) * f.resolution + static_cast<int>(211.3 / f.scale_um);
    EXPECT_TRUE(std::binary_search(comps[0].begin(), comps[0].end(), centre));
  }
}

TEST(Oracle, TenMicronCellFillsOneSection) {
  const FrameConfig f;
  const double sec = 500.0 / 16;
  CellSet set;
  set.cells.push_back({(4 + 0.5) * sec, (11 + 0.5) * sec, 0.0, 1.0, 5.0, 1.0, false});
  BitMask m = cell_mask(normalize_image(render_cells(set, f, OracleRules{})), ThresholdConfig::for_frame(f));
  auto occ = section_occupancy(m, 16);
  EXPECT_EQ(occ.occupied_count(), 1);
  EXPECT_TRUE(occ.occupied[11 * 16 + 4]);
}

TEST(Oracle, CellSetCsvRoundTrip) {
  fs::path dir = fresh_dir("cellset");
  fs::create_directories(dir);
  auto sim = simulate(rasterize(TopographySpec::lines(10, 20, 45), FrameConfig::desk()), 30, 0.8, OracleRules{}, 5);
  write_cellset_csv(dir / "c.csv", sim.cells);
  EXPECT_EQ(read_cellset_csv(dir / "c.csv"), sim.cells);
  write_text_file(dir / "bad.csv", "x,y\n");
  EXPECT_THROW(read_cellset_csv(dir / "bad.csv"), std::runtime_error);
}

TEST(Dataset, SingleRecordIsReproducible) {
  fs::path a = fresh_dir("ds_a"), b = fresh_dir("ds_b");
  auto ma = build_dataset(default_spec_mix(), OracleRules{}, 1, FrameConfig::desk(), 1234, a);
  auto mb = build_dataset(default_spec_mix(), OracleRules{}, 1, FrameConfig::desk(), 1234, b);
  ASSERT_EQ(ma.records.size(), 1u);
  EXPECT_EQ(ma.records[0].seed, 1234u);
  EXPECT_EQ(read_text_file(a / ma.records[0].fluorescence_png), read_text_file(b / mb.records[0].fluorescence_png));
  EXPECT_EQ(read_text_file(a / kManifestName), read_text_file(b / kManifestName));
}

TEST(Dataset, ManifestRoundTripsAndFilesExist) {
  fs::path dir = fresh_dir("ds_manifest");
  auto m = build_dataset(default_spec_mix(), OracleRules{}, 12, FrameConfig::desk(), 77, dir);
  auto back = read_manifest(dir / kManifestName);
  ASSERT_EQ(back.records.size(), 12u);
  EXPECT_EQ(back.frame, FrameConfig::desk());
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 12; ++i) {
    const DatasetRecord& r = back.records[i];
    EXPECT_EQ(r, m.records[i]);
    EXPECT_EQ(r.seed, 77u ^ i);
    seeds.insert(r.seed);
    EXPECT_TRUE(is_culture_day(r.day));
    EXPECT_GE(r.density, 0.05);
    EXPECT_LE(r.density, 0.9);
    auto raster = read_raster_png(dir / r.topography_png, back.frame);
    EXPECT_TRUE(raster.values == rasterize(r.spec, back.frame).values);
    EXPECT_EQ(read_cellset_csv(dir / r.cells_csv).cells.size(),
              simulate(raster, r.day, r.density, OracleRules{}, r.seed).cells.cells.size());
    EXPECT_TRUE(read_png_gray(dir / r.fluorescence_png) == quantize_8bit(simulate(raster, r.day, r.density, OracleRules{}, r.seed).image.values));
  }
  EXPECT_EQ(seeds.size(), 12u);
}

TEST(Dataset, MachinedPixelsCarryMoreSignal) {
  fs::path dir = fresh_dir("ds_occupancy");
  auto m = build_dataset(default_spec_mix(), OracleRules{}, 256, FrameConfig::desk(), 5, dir);
  double on = 0, off = 0;
  long n_on = 0, n_off = 0;
  for (const auto& r : m.records) {
    auto topo = read_raster_png(dir / r.topography_png, m.frame);
    Grid img = read_png_gray(dir / r.fluorescence_png);
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (topo.values[i] >= 0.5) {
        on += img[i];
        ++n_on;
      } else {
        off += img[i];
        ++n_off;
      }
    }
  }
  EXPECT_GT((on / n_on) / (off / n_off), 1.3);
}

TEST(Dataset, UnwritableDirectoryFailsBeforeWriting) {
  fs::path dir = fresh_dir("ds_blocked");
  fs::create_directories(dir);
  write_text_file(dir / "file", "x");
  EXPECT_THROW(build_dataset(default_spec_mix(), OracleRules{}, 2, FrameConfig::desk(), 1, dir / "file" / "sub"),
               std::runtime_error);
  EXPECT_THROW(build_dataset({}, OracleRules{}, 2, FrameConfig::desk(), 1, dir), std::invalid_argument);
  EXPECT_THROW(build_dataset(default_spec_mix(), OracleRules{}, 0, FrameConfig::desk(), 1, dir), std::invalid_argument);
}
