#include "celltopo/oracle.hpp"

#include "celltopo/image_io.hpp"
#include "celltopo/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace celltopo {

namespace fs = std::filesystem;

bool is_culture_day(int day) {
  return std::find(kCultureDays.begin(), kCultureDays.end(), day) != kCultureDays.end();
}

void check_day_density(int day, double density) {
  if (!is_culture_day(day)) {
    throw std::invalid_argument("day must be one of 0, 1, 8, 30, got " + std::to_string(day));
  }
  if (!(density >= 0.0 && density <= 1.0)) {
    throw std::invalid_argument("density must lie in [0, 1], got " + std::to_string(density));
  }
}

void OracleRules::validate() const {
  if (!(theta_align_um > 0.0)) throw std::invalid_argument("theta_align must be positive");
  if (!(adhesion_bias >= 1.0)) throw std::invalid_argument("adhesion_bias must be >= 1");
  for (double p : {parallel_influence, coherence_min, brightness_jitter, line_glow}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("oracle probabilities must lie in [0, 1]");
  }
  if (!(guided_elongation >= 1.0)) throw std::invalid_argument("guided elongation must be >= 1");
  if (!(structure_sigma_um > 0.0) || !(align_jitter_deg >= 0.0)) {
    throw std::invalid_argument("structure sigma must be positive and alignment jitter non-negative");
  }
  for (std::size_t i = 0; i < days.size(); ++i) {
    const DayProfile& d = days[i];
    if (d.day != kCultureDays[i] || !(d.radius_um > 0) || !(d.elongation >= 1) || !(d.brightness > 0) ||
        d.brightness > 1 || !(d.capacity >= 0)) {
      throw std::invalid_argument("invalid day profile for day " + std::to_string(d.day));
    }
  }
}

const DayProfile& OracleRules::profile(int day) const {
  for (const DayProfile& d : days)
    if (d.day == day) return d;
  throw std::invalid_argument("no day profile for day " + std::to_string(day));
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kOracle: return "oracle";
    case Provenance::kExperimental: return "experimental";
    case Provenance::kPredicted: return "predicted";
  }
  return "unknown";
}

namespace {

// Separable Gaussian blur; near the border the kernel is renormalized over
// the in-frame taps instead of padding.
std::vector<double> blur(const std::vector<double>& in, int n, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  for (int i = -r; i <= r; ++i) k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  auto pass = [&](const std::vector<double>& src, bool along_x) {
    std::vector<double> out(src.size());
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double s = 0.0, w = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int xx = along_x ? x + i : x, yy = along_x ? y : y + i;
          if (xx < 0 || xx >= n || yy < 0 || yy >= n) continue;
          const double kv = k[static_cast<std::size_t>(i + r)];
          s += kv * src[static_cast<std::size_t>(yy * n + xx)];
          w += kv;
        }
        out[static_cast<std::size_t>(y * n + x)] = s / w;
      }
    return out;
  };
  return pass(pass(in, true), false);
}

// Marks smooth runs shorter than max_run (Euclidean length, so a diagonal
// step counts sqrt(2) pixels) along rows, columns and both diagonals that
// end on machined pixels at both ends. A run cut by the frame edge continues
// outside the frame, so it takes the verdict of the nearest complete run on
// the same scan line, and stays open when there is none.
std::vector<std::uint8_t> bridge_gaps(const std::vector<std::uint8_t>& machined, int n, double max_run) {
  std::vector<std::uint8_t> bridged(machined.size(), 0);
  const int dirs[4][2] = {{1, 0}, {0, 1}, {1, 1}, {1, -1}};
  struct Run {
    std::vector<int> pixels;
    bool complete = false;
  };
  for (const auto& d : dirs) {
    const int dx = d[0], dy = d[1];
    const double step = std::hypot(dx, dy);
    auto is_short = [&](const Run& r) { return static_cast<double>(r.pixels.size()) * step < max_run - 1e-9; };
    // Starting pixels: every pixel whose predecessor lies outside the frame.
    for (int y0 = 0; y0 < n; ++y0)
      for (int x0 = 0; x0 < n; ++x0) {
        const int px = x0 - dx, py = y0 - dy;
        if (px >= 0 && px < n && py >= 0 && py < n) continue;
        std::vector<Run> runs;
        Run cur;
        bool seen_machined = false;
        for (int x = x0, y = y0; x >= 0 && x < n && y >= 0 && y < n; x += dx, y += dy) {
          const int i = y * n + x;
          if (machined[static_cast<std::size_t>(i)]) {
            if (!cur.pixels.empty()) {
              cur.complete = seen_machined;
              runs.push_back(std::move(cur));
              cur = Run{};
            }
            seen_machined = true;
          } else {
            cur.pixels.push_back(i);
          }
        }
        if (!cur.pixels.empty()) runs.push_back(std::move(cur));
        for (std::size_t r = 0; r < runs.size(); ++r) {
          bool bridge = false;
          if (runs[r].complete) {
            bridge = is_short(runs[r]);
          } else if (r == 0 && runs.size() > 1 && runs[1].complete) {
            bridge = is_short(runs[1]);
          } else if (r + 1 == runs.size() && r > 0 && runs[r - 1].complete) {
            bridge = is_short(runs[r - 1]);
          }
          if (bridge)
            for (int p : runs[r].pixels) bridged[static_cast<std::size_t>(p)] = 1;
        }
      }
  }
  return bridged;
}

double wrap180(double a) {
  a = std::fmod(a, 180.0);
  if (a < 0) a += 180.0;
  return a >= 180.0 ? 0.0 : a + 0.0;
}

}  // namespace

AdhesionMap analyze_topography(const TopographyRaster& raster, const OracleRules& rules) {
  rules.validate();
  const int n = raster.frame.resolution;
  if (raster.values.shape() != Grid::Shape{1, n, n}) {
    throw std::invalid_argument("raster shape " + shape_string(raster.values.shape()) + " does not match its frame");
  }
  AdhesionMap m;
  m.resolution = n;
  const std::size_t total = static_cast<std::size_t>(n) * n;
  m.machined.resize(total);
  for (std::size_t i = 0; i < total; ++i) m.machined[i] = raster.values[i] >= 0.5 ? 1 : 0;
  const double max_run = static_cast<double>(std::lround(rules.theta_align_um / raster.frame.scale_um));
  m.bridged = bridge_gaps(m.machined, n, max_run);

  // Structure tensor of the adhesive map.
  std::vector<double> a(total);
  for (std::size_t i = 0; i < total; ++i) a[i] = m.adhesive(i) ? 1.0 : 0.0;
  a = blur(a, n, 1.0);  // staircase edges of oblique lines otherwise bias the direction
  std::vector<double> jxx(total), jxy(total), jyy(total);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      // Central differences, one-sided on the frame border.
      auto at = [&](int yy, int xx) { return a[static_cast<std::size_t>(yy * n + xx)]; };
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, n - 1);
      const int yu = std::max(y - 1, 0), yd = std::min(y + 1, n - 1);
      const double gx = (at(y, xr) - at(y, xl)) / (xr - xl);
      const double gy = (at(yd, x) - at(yu, x)) / (yd - yu);
      const std::size_t i = static_cast<std::size_t>(y * n + x);
      jxx[i] = gx * gx;
      jxy[i] = gx * gy;
      jyy[i] = gy * gy;
    }
  const double sigma = rules.structure_sigma_um / raster.frame.scale_um;
  jxx = blur(jxx, n, sigma);
  jxy = blur(jxy, n, sigma);
  jyy = blur(jyy, n, sigma);
  m.line_like.assign(total, 0);
  m.line_angle_deg.assign(total, 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    const double tr = jxx[i] + jyy[i];
    if (tr < 1e-3) continue;
    const double diff = jxx[i] - jyy[i];
    const double coherence = std::sqrt(diff * diff + 4 * jxy[i] * jxy[i]) / tr;
    if (coherence < rules.coherence_min) continue;
    // Dominant gradient direction in (x, y-down); lines run perpendicular.
    const double grad = 0.5 * std::atan2(2 * jxy[i], diff) * 180.0 / std::numbers::pi;
    m.line_like[i] = 1;
    m.line_angle_deg[i] = wrap180(-(grad + 90.0));
  }
  return m;
}

bool configuration_aligned(const TopographyRaster& raster, const OracleRules& rules) {
  const AdhesionMap m = analyze_topography(raster, rules);
  long machined = 0, aligned = 0;
  for (std::size_t i = 0; i < m.machined.size(); ++i) {
    machined += m.machined[i];
    aligned += m.machined[i] & m.line_like[i];
  }
  return machined > 0 && 2 * aligned >= machined;
}

double expected_cell_count(const FrameConfig& frame, int day, double density, const OracleRules& rules) {
  check_day_density(day, density);
  const double area = frame.extent_um() * frame.extent_um();
  return density * rules.profile(day).capacity * area / (125.0 * 125.0);
}

Grid render_cells(const CellSet& cells, const FrameConfig& frame, const OracleRules& rules, const Grid* machined) {
  const int n = frame.resolution;
  Grid img({1, n, n});
  if (machined && rules.line_glow > 0) {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rules.line_glow * (*machined)[i];
  }
  for (const Cell& c : cells.cells) {
    // Footprint above a quarter of peak brightness equals the semi-axes.
    const double root_e = std::sqrt(c.elongation);
    const double sa = c.radius_um * root_e / (1.6651 * frame.scale_um);
    const double sb = c.radius_um / root_e / (1.6651 * frame.scale_um);
    const double phi = c.angle_deg * std::numbers::pi / 180.0;
    const double ux = std::cos(phi), uy = -std::sin(phi);  // major axis in (x, y-down)
    const double cx = c.x_um / frame.scale_um, cy = c.y_um / frame.scale_um;
    const double reach = 3.5 * sa;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach))), x1 = std::min(n - 1, static_cast<int>(std::ceil(cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach))), y1 = std::min(n - 1, static_cast<int>(std::ceil(cy + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = dx * ux + dy * uy, v = -dx * uy + dy * ux;
        img.at(0, y, x) += c.brightness * std::exp(-0.5 * (u * u / (sa * sa) + v * v / (sb * sb)));
      }
  }
  for (double& v : img.values()) v = std::min(v, 1.0);
  return img;
}

Simulation simulate(const TopographyRaster& raster, int day, double density, const OracleRules& rules,
                    std::uint64_t seed) {
  check_day_density(day, density);
  const AdhesionMap map = analyze_topography(raster, rules);
  const FrameConfig& frame = raster.frame;
  const int n = frame.resolution;
  Rng rng = make_rng(seed, "oracle");

  Simulation sim;
  sim.image.frame = frame;
  sim.image.provenance = Provenance::kOracle;
  const double lambda = expected_cell_count(frame, day, density, rules);
  const long count = lambda > 0 ? std::poisson_distribution<long>(lambda)(rng) : 0;

  std::vector<double> weights(map.machined.size());
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = map.adhesive(i) ? rules.adhesion_bias : 1.0;
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const DayProfile& prof = rules.profile(day);

  for (long c = 0; c < count; ++c) {
    const std::size_t i = pick(rng);
    Cell cell;
    cell.x_um = (static_cast<double>(i % static_cast<std::size_t>(n)) + unit(rng)) * frame.scale_um;
    cell.y_um = (static_cast<double>(i / static_cast<std::size_t>(n)) + unit(rng)) * frame.scale_um;
    cell.radius_um = prof.radius_um * (0.85 + 0.3 * unit(rng));
    cell.elongation = std::max(1.0, prof.elongation * (0.9 + 0.2 * unit(rng)));
    cell.brightness = std::clamp(prof.brightness * (1.0 + rules.brightness_jitter * (2 * unit(rng) - 1)), 0.05, 1.0);
    const bool follow = map.line_like[i] && (map.machined[i] || unit(rng) < rules.parallel_influence);
    const double jitter = rules.align_jitter_deg * (2 * unit(rng) - 1);
    const double free_angle = 180.0 * unit(rng);
    cell.aligned = follow;
    if (follow) cell.elongation = std::max(cell.elongation, rules.guided_elongation);
    cell.angle_deg = follow ? wrap180(map.line_angle_deg[i] + jitter) : wrap180(free_angle);
    sim.cells.cells.push_back(cell);
  }
  sim.image.values = render_cells(sim.cells, frame, rules, &raster.values);
  return sim;
}

void write_cellset_csv(const fs::path& path, const CellSet& cells) {
  std::ostringstream out;
  out << "x_um,y_um,angle_deg,elongation,radius_um,brightness,aligned\n";
  out.precision(17);
  for (const Cell& c : cells.cells) {
    out << c.x_um << ',' << c.y_um << ',' << c.angle_deg << ',' << c.elongation << ',' << c.radius_um << ','
        << c.brightness << ',' << (c.aligned ? 1 : 0) << '\n';
  }
  write_text_file(path, out.str());
}

CellSet read_cellset_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "x_um,y_um,angle_deg,elongation,radius_um,brightness,aligned") {
    throw std::runtime_error("not a cell set CSV: " + path.string());
  }
  CellSet set;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Cell c;
    char sep = 0;
    int aligned = 0;
    if (!(ls >> c.x_um >> sep >> c.y_um >> sep >> c.angle_deg >> sep >> c.elongation >> sep >> c.radius_um >> sep >>
          c.brightness >> sep >> aligned)) {
      throw std::runtime_error("malformed cell set row " + std::to_string(row) + " in " + path.string());
    }
    c.aligned = aligned != 0;
    set.cells.push_back(c);
  }
  return set;
}

std::vector<TopographySpec> default_spec_mix() {
  std::vector<TopographySpec> specs;
  for (double w : {7.5, 10.0, 12.0, 25.0})
    for (int s = 2; s <= 30; s += 2)
      for (double a : {0.0, 90.0, 45.0, 135.0}) specs.push_back(TopographySpec::lines(w, s, a));
  for (int i = 0; i < 24; ++i) specs.push_back(TopographySpec::blank());
  for (double s : {10.0, 20.0, 30.0}) {
    TopographySpec t = TopographySpec::lines(10.0, s);
    t.kind = PatternKind::kCrossedLines;
    specs.push_back(t);
    t.kind = PatternKind::kConcentricCircles;
    specs.push_back(t);
    t.kind = PatternKind::kCurves;
    specs.push_back(t);
    t.kind = PatternKind::kFilledCircles;
    specs.push_back(t);
  }
  for (const char* word : {"STEM", "CELL", "42"}) {
    TopographySpec g;
    g.kind = PatternKind::kGlyphs;
    g.width_um = 4.0;
    g.text = word;
    specs.push_back(g);
  }
  return specs;
}

namespace {

nlohmann::json record_json(const DatasetRecord& r, const FrameConfig& f) {
  return {{"spec", r.spec},
          {"day", r.day},
          {"density", r.density},
          {"seed", r.seed},
          {"resolution", f.resolution},
          {"scale_um", f.scale_um},
          {"topography_png", r.topography_png},
          {"fluorescence_png", r.fluorescence_png},
          {"cells_csv", r.cells_csv}};
}

}  // namespace

void write_manifest(const DatasetManifest& manifest) {
  std::string text;
  for (const DatasetRecord& r : manifest.records) text += record_json(r, manifest.frame).dump() + "\n";
  write_text_file(manifest.root / kManifestName, text);
}

DatasetManifest read_manifest(const fs::path& path) {
  DatasetManifest m;
  m.root = path.parent_path();
  std::istringstream in(read_text_file(path));
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      DatasetRecord r;
      r.spec = j.at("spec").get<TopographySpec>();
      r.day = j.at("day").get<int>();
      r.density = j.at("density").get<double>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.topography_png = j.at("topography_png").get<std::string>();
      r.fluorescence_png = j.at("fluorescence_png").get<std::string>();
      r.cells_csv = j.at("cells_csv").get<std::string>();
      const int res = j.at("resolution").get<int>();
      const double scale = j.at("scale_um").get<double>();
      FrameConfig f{res, scale, res * scale};
      if (m.records.empty()) {
        f.validate();
        m.frame = f;
      } else if (!(f == m.frame)) {
        throw std::invalid_argument("records disagree on the frame");
      }
      check_day_density(r.day, r.density);
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("manifest " + path.string() + " line " + std::to_string(row) + ": " + e.what());
    }
  }
  if (m.records.empty()) throw std::invalid_argument("manifest " + path.string() + " has no records");
  return m;
}

DatasetManifest build_dataset(const std::vector<TopographySpec>& specs, const OracleRules& rules, int count,
                              const FrameConfig& frame, std::uint64_t base_seed, const fs::path& out_dir) {
  if (count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (specs.empty()) throw std::invalid_argument("dataset needs at least one topography spec");
  frame.validate();
  rules.validate();
  for (const TopographySpec& s : specs) s.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("cannot create output directory " + out_dir.string());
  {
    const fs::path probe = out_dir / ".write_probe";
    write_text_file(probe, "");
    fs::remove(probe);
  }

  DatasetManifest m;
  m.frame = frame;
  m.root = out_dir;
  for (int i = 0; i < count; ++i) {
    DatasetRecord r;
    r.seed = base_seed ^ static_cast<std::uint64_t>(i);
    Rng rng = make_rng(r.seed, "dataset");
    r.spec = specs[std::uniform_int_distribution<std::size_t>(0, specs.size() - 1)(rng)];
    r.day = kCultureDays[std::uniform_int_distribution<std::size_t>(0, kCultureDays.size() - 1)(rng)];
    r.density = std::uniform_real_distribution<double>(0.05, 0.9)(rng);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%05d", i);
    r.topography_png = std::string("topo_") + stem + ".png";
    r.fluorescence_png = std::string("cells_") + stem + ".png";
    r.cells_csv = std::string("cells_") + stem + ".csv";

    const TopographyRaster raster = rasterize(r.spec, frame);
    const Simulation sim = simulate(raster, r.day, r.density, rules, r.seed);
    write_raster_png(out_dir / r.topography_png, raster);
    write_png_gray(out_dir / r.fluorescence_png, sim.image.values);
    write_cellset_csv(out_dir / r.cells_csv, sim.cells);
    m.records.push_back(std::move(r));
  }
  write_manifest(m);
  return m;
}

}  // namespace celltopo
