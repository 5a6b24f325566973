#pragma once

#include "celltopo/grid.hpp"
#include "celltopo/image_io.hpp"
#include "celltopo/patterns.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace celltopo {

/// Linear rescale mapping the 1st/99th intensity percentiles to 0/1, clipped.
/// When those percentiles coincide the min/max range is used instead, and a
/// constant image maps to all zeros.
Grid normalize_image(const Grid& image);

/// Picks a seeded uniform window x window crop of a 1 x H x W image and area
/// averages it down to out x out. window must be a multiple of out.
Grid crop_resize(const Grid& image, int window, int out, std::uint64_t seed);

struct BitMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1
  std::string source;

  BitMask() = default;
  BitMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  long count() const;
  bool same_size(const BitMask& o) const { return height == o.height && width == o.width; }
};

struct ThresholdConfig {
  double tau = 0.25;       // fraction of the normalized range
  double min_area_px = 0;  // smaller 8-connected components are dropped

  /// tau 0.25 and the area of a 5 um diameter disc at the frame scale.
  static ThresholdConfig for_frame(const FrameConfig& frame);
};

/// 8-connected components of a mask, each as a list of pixel indices
/// (y * width + x) in scan order.
std::vector<std::vector<int>> connected_components(const BitMask& mask);

/// Thresholds an already normalized image (value >= tau is occupied; tau = 0
/// marks everything) and removes components below the minimum area.
BitMask cell_mask(const Grid& normalized, const ThresholdConfig& cfg);

struct SectionOccupancy {
  int g = 16;
  int threshold = 1;
  std::vector<int> counts;          // occupied pixels per section, row-major g x g
  std::vector<std::uint8_t> occupied;

  int sections() const { return g * g; }
  int occupied_count() const;
};

SectionOccupancy section_occupancy(const BitMask& mask, int g = 16, int threshold = 1);

/// Hypergeometric probability of exactly k marked items when drawing n of N
/// with K marked. Zero outside the support; invalid N, K or n throw.
double hypergeom_pmf(long N, long K, long n, long k);
/// Natural log of P[X >= k_obs]; -inf when k_obs exceeds the support.
double hypergeom_log_tail(long N, long K, long n, long k_obs);
/// exp of the log tail, floored at the smallest normal double so that an
/// attainable overlap never reports P = 0.
double hypergeom_tail(long N, long K, long n, long k_obs);
/// P[Y >= k_obs] for Y ~ Binomial(n, K / N), the approximation to the
/// hypergeometric tail that ignores finite-population correction.
double binomial_tail(long N, long K, long n, long k_obs);

struct SectionComparison {
  long N = 0;
  long K = 0;  // experiment-occupied
  long n = 0;  // prediction-occupied
  long k = 0;  // both
  double p = 1.0;
  double log10_p = 0.0;  // exact even where p hits its floor
  double p_binomial = 1.0;
  RgbImage composite;  // blue = prediction only, red = experiment only, green = both
};

SectionComparison compare(const BitMask& pred, const BitMask& exp, int g = 16, int threshold = 1);

/// The same tail test with every pixel as a section.
SectionComparison pixel_level_p(const BitMask& pred, const BitMask& exp);

RgbImage composite_image(const BitMask& pred, const BitMask& exp);

/// "***" below 0.001, "**" below 0.01, otherwise empty.
std::string significance_stars(double p);

struct ComparisonRow {
  std::string image_id;
  long N = 0;
  long K = 0;
  long n = 0;
  long k = 0;
  double p_section = 1.0;
  double p_pixel = 1.0;
};

void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows);
/// Plain-text table with significance stars.
std::string comparison_report(const std::vector<ComparisonRow>& rows);

}  // namespace celltopo
