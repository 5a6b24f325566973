#pragma once

#include "celltopo/grid.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace celltopo {

/// Pixel grid of one imaged box. The default spans a 500 um box with
/// 256 pixels; the desk frame keeps the same um-per-pixel on 64 pixels.
struct FrameConfig {
  int resolution = 256;
  double scale_um = 500.0 / 256.0;  // um per pixel
  double box_side_um = 500.0;

  static FrameConfig desk() { return {64, 500.0 / 256.0, 125.0}; }
  static FrameConfig with_resolution(int resolution) {
    return {resolution, 500.0 / 256.0, resolution * 500.0 / 256.0};
  }

  /// Throws std::invalid_argument unless resolution is a power of two and
  /// resolution * scale matches box_side within 0.5%.
  void validate() const;
  double extent_um() const { return resolution * scale_um; }
  bool operator==(const FrameConfig&) const = default;
};

enum class PatternKind {
  kBlank,
  kParallelLines,
  kCrossedLines,
  kConcentricCircles,
  kFilledCircles,
  kCurves,
  kGlyphs,
  kBorderBox,
};

std::string to_string(PatternKind kind);
PatternKind pattern_kind_from_string(const std::string& name);

struct PointUm {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const PointUm&) const = default;
};

/// Parametric topography design. Coordinates are um relative to the frame
/// centre, x to the right and y downwards. Angles are degrees counter-
/// clockwise from +x as seen on screen. `separation_um` is the edge-to-edge
/// gap, so the line period is width + separation.
struct TopographySpec {
  PatternKind kind = PatternKind::kBlank;
  double width_um = 10.0;
  double separation_um = 20.0;
  double angle_deg = 0.0;
  std::vector<double> radii_um;        // ring radii or disc radii
  std::vector<PointUm> points_um;      // curve control points or disc centres
  std::string text;                    // glyph string
  double side_um = 500.0;              // border box side
  std::vector<TopographySpec> compose; // unioned into the pattern

  void validate() const;
  bool operator==(const TopographySpec&) const = default;

  static TopographySpec blank() { return {}; }
  static TopographySpec lines(double width_um, double separation_um, double angle_deg = 0.0);
};

enum class RenderMode { kBinary, kAntialiased };

/// 1 x R x R grid: 1 = laser machined, 0 = smooth.
struct TopographyRaster {
  FrameConfig frame;
  Grid values;
};

/// Renders `spec` into `frame`. Binary mode marks pixels whose centre lies
/// in a stroke; axis-aligned lines then cover exactly round(w / scale)
/// pixels separated by round(s / scale) smooth pixels. Strokes narrower
/// than half a pixel are rejected.
TopographyRaster rasterize(const TopographySpec& spec, const FrameConfig& frame,
                           RenderMode mode = RenderMode::kBinary);

double machined_fraction(const TopographyRaster& raster);

void to_json(nlohmann::json& j, const TopographySpec& spec);
void from_json(const nlohmann::json& j, TopographySpec& spec);

/// One spec per line.
void write_specs_jsonl(const std::filesystem::path& path, const std::vector<TopographySpec>& specs);
std::vector<TopographySpec> read_specs_jsonl(const std::filesystem::path& path);

void write_raster_png(const std::filesystem::path& path, const TopographyRaster& raster);
TopographyRaster read_raster_png(const std::filesystem::path& path, const FrameConfig& frame);

}  // namespace celltopo
