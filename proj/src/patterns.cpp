#include "celltopo/patterns.hpp"

#include "celltopo/image_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace celltopo {

void FrameConfig::validate() const {
  if (resolution < 2 || (resolution & (resolution - 1)) != 0) {
    throw std::invalid_argument("frame resolution must be a power of two, got " +
                                std::to_string(resolution));
  }
  if (!(scale_um > 0.0) || !(box_side_um > 0.0)) {
    throw std::invalid_argument("frame scale and box side must be positive");
  }
  if (std::fabs(resolution * scale_um - box_side_um) > 0.005 * box_side_um) {
    throw std::invalid_argument("frame resolution x scale must equal box side within 0.5%");
  }
}

namespace {

constexpr std::array<std::pair<PatternKind, const char*>, 8> kKindNames{{
    {PatternKind::kBlank, "blank"},
    {PatternKind::kParallelLines, "parallel_lines"},
    {PatternKind::kCrossedLines, "crossed_lines"},
    {PatternKind::kConcentricCircles, "concentric_circles"},
    {PatternKind::kFilledCircles, "filled_circles"},
    {PatternKind::kCurves, "curves"},
    {PatternKind::kGlyphs, "glyphs"},
    {PatternKind::kBorderBox, "border_box"},
}};

// 5x7 glyphs, one 5-bit row mask per line (MSB = leftmost column).
constexpr std::array<std::array<std::uint8_t, 7>, 36> kFont{{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}, {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}, {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
    {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},
}};

const std::array<std::uint8_t, 7>* glyph_rows(char c) {
  if (c >= '0' && c <= '9') return &kFont[static_cast<std::size_t>(c - '0')];
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  if (c >= 'A' && c <= 'Z') return &kFont[static_cast<std::size_t>(10 + c - 'A')];
  return nullptr;
}

double snap(double v) { return std::fabs(v) < 1e-12 ? 0.0 : v; }

// Sample positions are in pixels relative to the frame centre. Each pixel is
// sampled on an ss x ss lattice; ss = 1 samples the pixel centre only.
class Canvas {
 public:
  Canvas(int resolution, int ss) : res_(resolution), ss_(ss), hits_(static_cast<std::size_t>(resolution) * resolution, 0) {}

  // Marks every sample inside [x0,x1] x [y0,y1] (pixel coordinates) for which pred holds.
  template <typename Pred>
  void stamp(double x0, double y0, double x1, double y1, Pred&& pred) {
    const double half = res_ / 2.0;
    const int n = res_ * ss_;
    auto to_index = [&](double p) { return (p + half) * ss_ - 0.5; };
    const int i0 = std::max(0, static_cast<int>(std::floor(to_index(x0))));
    const int i1 = std::min(n - 1, static_cast<int>(std::ceil(to_index(x1))));
    const int j0 = std::max(0, static_cast<int>(std::floor(to_index(y0))));
    const int j1 = std::min(n - 1, static_cast<int>(std::ceil(to_index(y1))));
    for (int j = j0; j <= j1; ++j) {
      const double yp = (j + 0.5) / ss_ - half;
      for (int i = i0; i <= i1; ++i) {
        const double xp = (i + 0.5) / ss_ - half;
        if (!pred(xp, yp)) continue;
        const std::size_t bit = static_cast<std::size_t>(j % ss_) * ss_ + static_cast<std::size_t>(i % ss_);
        hits_[static_cast<std::size_t>(j / ss_) * res_ + static_cast<std::size_t>(i / ss_)] |= (1ULL << bit);
      }
    }
  }
  template <typename Pred>
  void stamp_all(Pred&& pred) {
    const double h = res_ / 2.0;
    stamp(-h, -h, h, h, std::forward<Pred>(pred));
  }

  Grid coverage() const {
    Grid out({1, res_, res_});
    const double per = 1.0 / (ss_ * ss_);
    for (std::size_t i = 0; i < hits_.size(); ++i) out[i] = std::popcount(hits_[i]) * per;
    return out;
  }

 private:
  int res_;
  int ss_;
  std::vector<std::uint64_t> hits_;  // one bit per sample (ss <= 8)
};

void stamp_segment(Canvas& canvas, double ax, double ay, double bx, double by, double half_w) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  canvas.stamp(std::min(ax, bx) - half_w, std::min(ay, by) - half_w, std::max(ax, bx) + half_w,
               std::max(ay, by) + half_w, [=](double x, double y) {
                 double t = len2 > 0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
                 t = std::clamp(t, 0.0, 1.0);
                 const double ex = x - (ax + t * dx), ey = y - (ay + t * dy);
                 return ex * ex + ey * ey <= half_w * half_w;
               });
}

void stamp_polyline(Canvas& canvas, const std::vector<PointUm>& pts_px, double half_w) {
  for (std::size_t i = 0; i + 1 < pts_px.size(); ++i) {
    stamp_segment(canvas, pts_px[i].x, pts_px[i].y, pts_px[i + 1].x, pts_px[i + 1].y, half_w);
  }
}

// Catmull-Rom spline through the control points, sampled every ~0.25 px.
std::vector<PointUm> spline(const std::vector<PointUm>& ctrl) {
  if (ctrl.size() < 3) return ctrl;
  std::vector<PointUm> out;
  for (std::size_t i = 0; i + 1 < ctrl.size(); ++i) {
    const PointUm& p0 = ctrl[i == 0 ? 0 : i - 1];
    const PointUm& p1 = ctrl[i];
    const PointUm& p2 = ctrl[i + 1];
    const PointUm& p3 = ctrl[std::min(i + 2, ctrl.size() - 1)];
    const double len = std::hypot(p2.x - p1.x, p2.y - p1.y);
    const int steps = std::max(2, static_cast<int>(std::ceil(len * 4)));
    for (int s = 0; s < steps; ++s) {
      const double t = static_cast<double>(s) / steps, t2 = t * t, t3 = t2 * t;
      auto cr = [&](double a, double b, double c, double d) {
        return 0.5 * (2 * b + (-a + c) * t + (2 * a - 5 * b + 4 * c - d) * t2 + (-a + 3 * b - 3 * c + d) * t3);
      };
      out.push_back({cr(p0.x, p1.x, p2.x, p3.x), cr(p0.y, p1.y, p2.y, p3.y)});
    }
  }
  out.push_back(ctrl.back());
  return out;
}

void stamp_stripes(Canvas& canvas, double angle_deg, int thickness_px, int period_px) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double nx = snap(std::sin(a)), ny = snap(std::cos(a));
  const double t = thickness_px, p = period_px;
  canvas.stamp_all([=](double x, double y) {
    const double d = nx * x + ny * y + t / 2.0;
    return d - p * std::floor(d / p) < t;
  });
}

void render_into(Canvas& canvas, const TopographySpec& spec, const FrameConfig& frame) {
  const double scale = frame.scale_um;
  const double half_w = spec.width_um / (2.0 * scale);
  const double half_frame = frame.resolution / 2.0;
  switch (spec.kind) {
    case PatternKind::kBlank:
      break;
    case PatternKind::kParallelLines:
    case PatternKind::kCrossedLines: {
      const int thickness = std::max(1, static_cast<int>(std::lround(spec.width_um / scale)));
      // The gap is rounded on its own so that widening the lines never shrinks
      // the machined fraction through rounding of the period.
      const int period = thickness + static_cast<int>(std::lround(spec.separation_um / scale));
      stamp_stripes(canvas, spec.angle_deg, thickness, period);
      if (spec.kind == PatternKind::kCrossedLines) stamp_stripes(canvas, spec.angle_deg + 90.0, thickness, period);
      break;
    }
    case PatternKind::kConcentricCircles: {
      std::vector<double> radii = spec.radii_um;
      if (radii.empty()) {
        const double reach = frame.extent_um() * std::numbers::sqrt2 / 2.0;
        for (double r = spec.width_um + spec.separation_um; r < reach + spec.width_um; r += spec.width_um + spec.separation_um) {
          radii.push_back(r);
        }
      }
      for (double r_um : radii) {
        const double r = r_um / scale;
        const double outer = r + half_w;
        canvas.stamp(-outer, -outer, outer, outer, [=](double x, double y) {
          const double d = std::hypot(x, y) - r;
          return d >= -half_w && d < half_w;
        });
      }
      break;
    }
    case PatternKind::kFilledCircles: {
      std::vector<PointUm> centres = spec.points_um;
      const double default_r = spec.radii_um.empty() ? spec.width_um : spec.radii_um.front();
      if (centres.empty()) {
        const double pitch = 2 * default_r + spec.separation_um;
        const int n = static_cast<int>(std::ceil(frame.extent_um() / (2 * pitch))) + 1;
        for (int j = -n; j <= n; ++j)
          for (int i = -n; i <= n; ++i) centres.push_back({i * pitch, j * pitch});
      }
      for (std::size_t i = 0; i < centres.size(); ++i) {
        const double r = (spec.radii_um.size() == centres.size() ? spec.radii_um[i] : default_r) / scale;
        const double cx = centres[i].x / scale, cy = centres[i].y / scale;
        canvas.stamp(cx - r, cy - r, cx + r, cy + r, [=](double x, double y) {
          return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
        });
      }
      break;
    }
    case PatternKind::kCurves: {
      if (!spec.points_um.empty()) {
        std::vector<PointUm> px;
        for (const PointUm& p : spec.points_um) px.push_back({p.x / scale, p.y / scale});
        stamp_polyline(canvas, spline(px), half_w);
        break;
      }
      // Default: a family of sinusoidal curves with the line period.
      const double period = (spec.width_um + spec.separation_um) / scale;
      const double amplitude = 15.0 / scale, wavelength = 100.0 / scale;
      const int n = static_cast<int>(std::ceil((half_frame + amplitude) / period)) + 1;
      for (int k = -n; k <= n; ++k) {
        std::vector<PointUm> line;
        for (double x = -half_frame - 2; x <= half_frame + 2; x += 0.5) {
          line.push_back({x, k * period + amplitude * std::sin(2 * std::numbers::pi * x / wavelength)});
        }
        stamp_polyline(canvas, line, half_w);
      }
      break;
    }
    case PatternKind::kGlyphs: {
      const double cell = spec.width_um / scale;  // one font pixel per stroke width
      const double text_w = (static_cast<double>(spec.text.size()) * 6 - 1) * cell;
      const double x_start = -text_w / 2.0, y_start = -3.5 * cell;
      for (std::size_t ci = 0; ci < spec.text.size(); ++ci) {
        const auto* rows = glyph_rows(spec.text[ci]);
        if (!rows) continue;
        for (int r = 0; r < 7; ++r)
          for (int c = 0; c < 5; ++c) {
            if (!((*rows)[static_cast<std::size_t>(r)] & (0x10 >> c))) continue;
            const double x0 = x_start + (static_cast<double>(ci) * 6 + c) * cell, y0 = y_start + r * cell;
            canvas.stamp(x0, y0, x0 + cell, y0 + cell, [=](double x, double y) {
              return x >= x0 && x < x0 + cell && y >= y0 && y < y0 + cell;
            });
          }
      }
      break;
    }
    case PatternKind::kBorderBox: {
      const double outer = spec.side_um / (2.0 * scale);
      const double inner = outer - spec.width_um / scale;
      canvas.stamp(-outer, -outer, outer, outer, [=](double x, double y) {
        const double m = std::max(std::fabs(x), std::fabs(y));
        return m <= outer && m > inner;
      });
      break;
    }
  }
  for (const TopographySpec& sub : spec.compose) render_into(canvas, sub, frame);
}

void validate_strokes(const TopographySpec& spec, const FrameConfig& frame) {
  if (spec.kind != PatternKind::kBlank && spec.width_um < 0.5 * frame.scale_um) {
    throw std::invalid_argument("stroke width " + std::to_string(spec.width_um) +
                                " um is below half a pixel (" + std::to_string(frame.scale_um) +
                                " um/px) and cannot be represented");
  }
  for (const TopographySpec& sub : spec.compose) validate_strokes(sub, frame);
}

}  // namespace

std::string to_string(PatternKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

PatternKind pattern_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kKindNames)
    if (name == n) return k;
  throw std::invalid_argument("unknown pattern kind '" + name + "'");
}

void TopographySpec::validate() const {
  if (kind != PatternKind::kBlank && !(width_um > 0.0)) {
    throw std::invalid_argument("pattern width must be positive for " + to_string(kind));
  }
  if (!(separation_um >= 0.0)) throw std::invalid_argument("line separation must be >= 0");
  if (!std::isfinite(angle_deg)) throw std::invalid_argument("pattern angle must be finite");
  for (double r : radii_um)
    if (!(r > 0.0)) throw std::invalid_argument("radii must be positive");
  if (kind == PatternKind::kBorderBox && !(side_um > width_um)) {
    throw std::invalid_argument("border box side must exceed its stroke width");
  }
  for (const TopographySpec& sub : compose) sub.validate();
}

TopographySpec TopographySpec::lines(double width_um, double separation_um, double angle_deg) {
  TopographySpec s;
  s.kind = PatternKind::kParallelLines;
  s.width_um = width_um;
  s.separation_um = separation_um;
  s.angle_deg = angle_deg;
  return s;
}

TopographyRaster rasterize(const TopographySpec& spec, const FrameConfig& frame, RenderMode mode) {
  frame.validate();
  spec.validate();
  validate_strokes(spec, frame);
  Canvas canvas(frame.resolution, mode == RenderMode::kBinary ? 1 : 4);
  render_into(canvas, spec, frame);
  return {frame, canvas.coverage()};
}

double machined_fraction(const TopographyRaster& raster) {
  if (raster.values.empty()) return 0.0;
  double s = 0.0;
  for (double v : raster.values.values()) s += v;
  return s / static_cast<double>(raster.values.size());
}

void to_json(nlohmann::json& j, const TopographySpec& spec) {
  j = nlohmann::json{{"kind", to_string(spec.kind)},
                     {"width_um", spec.width_um},
                     {"separation_um", spec.separation_um},
                     {"angle_deg", spec.angle_deg}};
  if (!spec.radii_um.empty()) j["radii_um"] = spec.radii_um;
  if (!spec.points_um.empty()) {
    auto pts = nlohmann::json::array();
    for (const PointUm& p : spec.points_um) pts.push_back({p.x, p.y});
    j["points_um"] = pts;
  }
  if (!spec.text.empty()) j["text"] = spec.text;
  if (spec.kind == PatternKind::kBorderBox) j["side_um"] = spec.side_um;
  if (!spec.compose.empty()) j["compose"] = spec.compose;
}

void from_json(const nlohmann::json& j, TopographySpec& spec) {
  static const std::vector<std::string> known{"kind", "width_um", "separation_um", "angle_deg",
                                              "radii_um", "points_um", "text", "side_um", "compose"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown topography spec key '" + key + "'");
    }
  }
  spec = TopographySpec{};
  spec.kind = pattern_kind_from_string(j.at("kind").get<std::string>());
  spec.width_um = j.value("width_um", spec.width_um);
  spec.separation_um = j.value("separation_um", spec.separation_um);
  spec.angle_deg = j.value("angle_deg", spec.angle_deg);
  if (j.contains("radii_um")) spec.radii_um = j.at("radii_um").get<std::vector<double>>();
  if (j.contains("points_um")) {
    for (const auto& p : j.at("points_um")) spec.points_um.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  spec.text = j.value("text", std::string{});
  spec.side_um = j.value("side_um", spec.side_um);
  if (j.contains("compose")) spec.compose = j.at("compose").get<std::vector<TopographySpec>>();
}

void write_specs_jsonl(const std::filesystem::path& path, const std::vector<TopographySpec>& specs) {
  std::string text;
  for (const TopographySpec& s : specs) text += nlohmann::json(s).dump() + "\n";
  write_text_file(path, text);
}

std::vector<TopographySpec> read_specs_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<TopographySpec> specs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      specs.push_back(nlohmann::json::parse(line).get<TopographySpec>());
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return specs;
}

void write_raster_png(const std::filesystem::path& path, const TopographyRaster& raster) {
  write_png_gray(path, raster.values);
}

TopographyRaster read_raster_png(const std::filesystem::path& path, const FrameConfig& frame) {
  Grid values = read_png_gray(path);
  if (values.dim(1) != frame.resolution || values.dim(2) != frame.resolution) {
    throw std::invalid_argument("topography " + path.string() + " is " + std::to_string(values.dim(2)) + "x" +
                                std::to_string(values.dim(1)) + ", expected " +
                                std::to_string(frame.resolution) + " square");
  }
  return {frame, std::move(values)};
}

}  // namespace celltopo
