#pragma once

// Rule-based synthetic cell culture. Given a topography raster it places
// cells with a preference for machined pixels, aligns them along lines whose
// smooth gaps are too wide to bridge, and renders a fluorescence image.

#include "celltopo/grid.hpp"
#include "celltopo/patterns.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace celltopo {

inline constexpr std::array<int, 4> kCultureDays{0, 1, 8, 30};
bool is_culture_day(int day);
/// Throws std::invalid_argument unless day is a culture day and density in [0,1].
void check_day_density(int day, double density);

struct DayProfile {
  int day = 0;
  double radius_um = 6.0;
  double elongation = 1.0;  // major / minor axis
  double brightness = 1.0;
  double capacity = 20.0;   // cells per 125 x 125 um at density 1
};

struct OracleRules {
  double theta_align_um = 12.0;   // smooth gaps narrower than this are bridged
  double adhesion_bias = 4.0;     // placement weight of adhesive vs smooth pixels
  double parallel_influence = 0.3;
  double align_jitter_deg = 10.0;
  double guided_elongation = 2.0; // line-following cells stretch to at least this
  double structure_sigma_um = 8.0;
  double coherence_min = 0.5;
  double brightness_jitter = 0.15;
  double line_glow = 0.0;         // debris fluorescence on machined pixels
  std::array<DayProfile, 4> days{{{0, 6.0, 1.3, 1.0, 20.0},
                                  {1, 7.0, 2.0, 0.85, 24.0},
                                  {8, 8.0, 3.0, 0.7, 32.0},
                                  {30, 9.0, 3.5, 0.6, 40.0}}};

  void validate() const;
  const DayProfile& profile(int day) const;
};

struct Cell {
  double x_um = 0.0;  // from the frame's top-left corner, y downwards
  double y_um = 0.0;
  double angle_deg = 0.0;  // major axis, counter-clockwise on screen, [0, 180)
  double elongation = 1.0;
  double radius_um = 0.0;
  double brightness = 1.0;
  bool aligned = false;
  bool operator==(const Cell&) const = default;
};

struct CellSet {
  std::vector<Cell> cells;
  bool operator==(const CellSet&) const = default;
};

enum class Provenance { kOracle, kExperimental, kPredicted };
std::string to_string(Provenance p);

struct FluorescenceImage {
  FrameConfig frame;
  Grid values;  // 1 x R x R in [0, 1]
  Provenance provenance = Provenance::kOracle;
};

/// Per-pixel view of a raster as the cells see it.
struct AdhesionMap {
  int resolution = 0;
  std::vector<std::uint8_t> machined;
  std::vector<std::uint8_t> bridged;    // smooth pixels inside a gap shorter than theta
  std::vector<std::uint8_t> line_like;  // coherent local structure of the adhesive map
  std::vector<double> line_angle_deg;   // local line direction where line_like

  bool adhesive(std::size_t i) const { return machined[i] || bridged[i]; }
};

AdhesionMap analyze_topography(const TopographyRaster& raster, const OracleRules& rules);

/// True when at least half of the machined pixels are line-like, i.e. the
/// oracle aligns on-line cells for this topography.
bool configuration_aligned(const TopographyRaster& raster, const OracleRules& rules);

double expected_cell_count(const FrameConfig& frame, int day, double density, const OracleRules& rules);

/// Anisotropic Gaussian blobs, summed and clipped to [0, 1].
Grid render_cells(const CellSet& cells, const FrameConfig& frame, const OracleRules& rules,
                  const Grid* machined = nullptr);

struct Simulation {
  FluorescenceImage image;
  CellSet cells;
};

Simulation simulate(const TopographyRaster& raster, int day, double density, const OracleRules& rules,
                    std::uint64_t seed);

void write_cellset_csv(const std::filesystem::path& path, const CellSet& cells);
CellSet read_cellset_csv(const std::filesystem::path& path);

struct DatasetRecord {
  TopographySpec spec;
  int day = 0;
  double density = 0.0;
  std::uint64_t seed = 0;
  std::string topography_png;  // relative to the manifest directory
  std::string fluorescence_png;
  std::string cells_csv;
  bool operator==(const DatasetRecord&) const = default;
};

struct DatasetManifest {
  FrameConfig frame;
  std::filesystem::path root;  // directory holding the manifest and images
  std::vector<DatasetRecord> records;
};

/// Mostly parallel lines over the width and separation ladders, plus blank
/// glass and the other pattern families.
std::vector<TopographySpec> default_spec_mix();

/// Record i draws its spec, day and density (in [0.05, 0.9]) from seed
/// base_seed ^ i, writes its images under out_dir and the manifest last.
DatasetManifest build_dataset(const std::vector<TopographySpec>& specs, const OracleRules& rules, int count,
                              const FrameConfig& frame, std::uint64_t base_seed,
                              const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);
inline constexpr const char* kManifestName = "manifest.jsonl";

}  // namespace celltopo
