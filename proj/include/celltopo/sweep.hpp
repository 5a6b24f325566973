#pragma once

// Alignment measurements on parallel-line predictions, the per-width minimum
// line separation at which cells align, and the straight-line fit over widths.

#include "celltopo/oracle.hpp"
#include "celltopo/stats.hpp"
#include "celltopo/wnet.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace celltopo {

struct AlignmentConfig {
  double cone_deg = 20.0;          // half-width of the accepted angle window
  double min_elongation = 1.5;     // major / minor axis ratio for an oriented component
  double fraction_threshold = 0.6;
  int min_oriented = 5;            // fewer oriented components cannot be judged aligned
  double on_line_share = 0.5;      // with a topography, score components this much on machined pixels
  ThresholdConfig threshold;       // mask extraction from a fluorescence image

  void validate() const;
};

/// Shape of one pixel set from its second central moments.
struct ComponentShape {
  double cx = 0.0;
  double cy = 0.0;
  double angle_deg = 0.0;  // major axis, counter-clockwise on screen, [0, 180)
  double elongation = 1.0;
  long area = 0;
};

/// Moments of pixels given as y * width + x indices. A single pixel or a
/// degenerate set reports elongation 1.
ComponentShape component_shape(const std::vector<int>& pixels, int width);

/// Smallest angle between two axes, in [0, 90].
double axis_difference_deg(double a, double b);

struct AlignmentScore {
  double fraction = 0.0;  // aligned / oriented, 0 when nothing is oriented
  int components = 0;
  int oriented = 0;
  int aligned = 0;
  bool undefined = false;  // no oriented component

  AlignmentScore& operator+=(const AlignmentScore& o);
};

/// Throws std::invalid_argument ("no cells to score") for an empty mask.
AlignmentScore alignment_score(const BitMask& mask, double line_angle_deg, const AlignmentConfig& cfg);
AlignmentScore alignment_score(const CellSet& cells, double line_angle_deg, const AlignmentConfig& cfg);
/// Normalizes and thresholds the image, then scores its components. With a
/// machined raster only components lying on the lines are scored.
AlignmentScore alignment_score(const Grid& image, double line_angle_deg, const AlignmentConfig& cfg,
                               const Grid* machined = nullptr);

bool is_aligned(const AlignmentScore& s, const AlignmentConfig& cfg);

struct AlignmentRecord {
  double width_um = 0.0;
  double separation_um = 0.0;
  int day = 0;
  double density = 0.0;
  double aligned_fraction = 0.0;
  bool is_aligned = false;
  int oriented = 0;
};

/// Result of scanning one separation ladder.
struct Crossing {
  std::optional<double> min_separation;  // empty: above the ladder
  bool non_monotone = false;             // an aligned rung sits below the crossing
};

/// Smallest separation from which every larger rung is aligned. `aligned`
/// runs parallel to a strictly increasing `ladder`.
Crossing find_crossing(const std::vector<double>& ladder, const std::vector<bool>& aligned);

struct WidthSummary {
  double width_um = 0.0;
  std::vector<Crossing> pairs;  // one per (day, density), days outer
  int measured = 0;             // pairs with a crossing on the ladder
  int above_ladder = 0;
  double mean = 0.0;            // over measured pairs only
  double stddev = 0.0;          // sample standard deviation, 0 for one pair

  bool has_value() const { return measured > 0; }
};

/// Fluorescence image for a line pattern at one (day, density, replicate).
using Predictor = std::function<Grid(const TopographyRaster&, int day, double density, std::uint64_t seed)>;

Predictor model_predictor(const Model& generator);
Predictor oracle_predictor(const OracleRules& rules);

struct SweepConfig {
  std::vector<double> widths_um{7.5, 10.0, 12.0, 25.0};
  std::vector<double> separations_um;  // default 2..30 step 2
  std::vector<int> days{0, 1, 8, 30};
  std::vector<double> densities{0.2, 0.4, 0.6};
  int replicates = 6;                  // pooled seeds per grid point
  double line_angle_deg = 0.0;
  std::uint64_t seed = 1;
  FrameConfig frame = FrameConfig::desk();
  AlignmentConfig alignment;

  SweepConfig();
  void validate() const;
};

/// Scores every (width, separation, day, density) point and summarizes the
/// crossing per width.
struct MinSeparation {
  std::vector<AlignmentRecord> records;
  WidthSummary summary;
};

MinSeparation min_separation(const Predictor& predict, double width_um, const SweepConfig& cfg);

struct FitPoint {
  double x = 0.0;
  double y = 0.0;
  double err = 0.0;
};

struct AlignmentFit {
  std::vector<FitPoint> points;
  double slope = 0.0;
  double slope_err = 0.0;
  double intercept = 0.0;
  double intercept_err = 0.0;
  double residual_sd = 0.0;
};

/// Ordinary least squares on (x, y); errors from the residual variance.
/// Needs at least three distinct x values.
AlignmentFit fit_line(const std::vector<FitPoint>& points);

struct SweepResult {
  SweepConfig config;
  std::vector<AlignmentRecord> records;
  std::vector<WidthSummary> widths;
  std::optional<AlignmentFit> fit;  // empty when fewer than three widths have a value
};

SweepResult run_sweep(const Predictor& predict, const SweepConfig& cfg);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<AlignmentRecord>& records);
/// Per-width summary rows followed by the fit, as CSV.
void write_fit_csv(const std::filesystem::path& path, const SweepResult& result);
std::string fit_report(const SweepResult& result);
/// Scatter of mean minimum separation against width with error bars, the
/// trend line and its +/- error band.
RgbImage render_fit_plot(const SweepResult& result, int width = 480, int height = 360);

}  // namespace celltopo
