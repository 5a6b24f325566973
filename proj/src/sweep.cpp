#include "celltopo/sweep.hpp"

#include "celltopo/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace celltopo {

void AlignmentConfig::validate() const {
  if (!(cone_deg > 0 && cone_deg <= 90)) throw std::invalid_argument("alignment cone must be in (0, 90] degrees");
  if (!(min_elongation >= 1)) throw std::invalid_argument("minimum elongation must be >= 1");
  if (!(fraction_threshold > 0 && fraction_threshold <= 1)) {
    throw std::invalid_argument("alignment fraction threshold must be in (0, 1]");
  }
  if (min_oriented < 1) throw std::invalid_argument("minimum oriented count must be >= 1");
  if (!(on_line_share >= 0 && on_line_share <= 1)) throw std::invalid_argument("on-line share must be in [0, 1]");
  if (!(threshold.tau >= 0 && threshold.tau <= 1)) throw std::invalid_argument("mask threshold must be in [0, 1]");
}

ComponentShape component_shape(const std::vector<int>& pixels, int width) {
  if (pixels.empty()) throw std::invalid_argument("component has no pixels");
  ComponentShape s;
  s.area = static_cast<long>(pixels.size());
  for (int p : pixels) {
    s.cx += p % width;
    s.cy += p / width;
  }
  s.cx /= s.area;
  s.cy /= s.area;
  // Each pixel is a unit square, which adds 1/12 to both variances.
  double xx = 1.0 / 12, yy = 1.0 / 12, xy = 0.0;
  for (int p : pixels) {
    const double dx = p % width - s.cx, dy = p / width - s.cy;
    xx += dx * dx / s.area;
    yy += dy * dy / s.area;
    xy += dx * dy / s.area;
  }
  const double mid = 0.5 * (xx + yy), half = std::hypot(0.5 * (xx - yy), xy);
  s.elongation = std::sqrt((mid + half) / (mid - half));
  // Image rows run downwards, so the screen angle is the negated image angle.
  const double phi = 0.5 * std::atan2(2 * xy, xx - yy) * 180.0 / std::numbers::pi;
  s.angle_deg = std::fmod(-phi + 360.0, 180.0);
  return s;
}

double axis_difference_deg(double a, double b) {
  const double d = std::fmod(std::fabs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

AlignmentScore& AlignmentScore::operator+=(const AlignmentScore& o) {
  components += o.components;
  oriented += o.oriented;
  aligned += o.aligned;
  undefined = oriented == 0;
  fraction = oriented > 0 ? static_cast<double>(aligned) / oriented : 0.0;
  return *this;
}

namespace {

void tally(AlignmentScore& s, double elongation, double angle, double line_angle, const AlignmentConfig& cfg) {
  ++s.components;
  if (elongation < cfg.min_elongation) return;
  ++s.oriented;
  if (axis_difference_deg(angle, line_angle) <= cfg.cone_deg) ++s.aligned;
}

void finish(AlignmentScore& s) {
  s.undefined = s.oriented == 0;
  s.fraction = s.undefined ? 0.0 : static_cast<double>(s.aligned) / s.oriented;
}

}  // namespace

namespace {

AlignmentScore score_components(const BitMask& mask, double line_angle_deg, const AlignmentConfig& cfg,
                                const Grid* machined) {
  const auto comps = connected_components(mask);
  if (comps.empty()) throw std::invalid_argument("no cells to score");
  AlignmentScore s;
  for (const auto& c : comps) {
    if (machined) {
      long on = 0;
      for (int p : c) on += (*machined)[static_cast<std::size_t>(p)] > 0.5 ? 1 : 0;
      if (on < cfg.on_line_share * static_cast<double>(c.size())) continue;
    }
    const ComponentShape shape = component_shape(c, mask.width);
    tally(s, shape.elongation, shape.angle_deg, line_angle_deg, cfg);
  }
  finish(s);
  return s;
}

}  // namespace

AlignmentScore alignment_score(const BitMask& mask, double line_angle_deg, const AlignmentConfig& cfg) {
  return score_components(mask, line_angle_deg, cfg, nullptr);
}

AlignmentScore alignment_score(const CellSet& cells, double line_angle_deg, const AlignmentConfig& cfg) {
  if (cells.cells.empty()) throw std::invalid_argument("no cells to score");
  AlignmentScore s;
  for (const Cell& c : cells.cells) tally(s, c.elongation, c.angle_deg, line_angle_deg, cfg);
  finish(s);
  return s;
}

AlignmentScore alignment_score(const Grid& image, double line_angle_deg, const AlignmentConfig& cfg,
                               const Grid* machined) {
  if (machined && machined->size() != image.size()) {
    throw std::invalid_argument("topography " + shape_string(machined->shape()) + " and image " +
                                shape_string(image.shape()) + " differ in size");
  }
  return score_components(cell_mask(normalize_image(image), cfg.threshold), line_angle_deg, cfg, machined);
}

bool is_aligned(const AlignmentScore& s, const AlignmentConfig& cfg) {
  return s.oriented >= cfg.min_oriented && s.fraction >= cfg.fraction_threshold;
}

Crossing find_crossing(const std::vector<double>& ladder, const std::vector<bool>& aligned) {
  if (ladder.size() != aligned.size()) throw std::invalid_argument("ladder and verdicts differ in length");
  if (ladder.empty()) throw std::invalid_argument("empty separation ladder");
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (!(ladder[i] > ladder[i - 1])) throw std::invalid_argument("separation ladder must be strictly increasing");
  }
  Crossing c;
  std::size_t i = ladder.size();
  while (i > 0 && aligned[i - 1]) --i;
  if (i == ladder.size()) return c;
  c.min_separation = ladder[i];
  c.non_monotone = std::any_of(aligned.begin(), aligned.begin() + static_cast<std::ptrdiff_t>(i),
                               [](bool a) { return a; });
  return c;
}

Predictor model_predictor(const Model& generator) {
  return [&generator](const TopographyRaster& raster, int day, double density, std::uint64_t seed) {
    return generate(generator, assemble_input(raster, day, density, seed)).values;
  };
}

Predictor oracle_predictor(const OracleRules& rules) {
  return [rules](const TopographyRaster& raster, int day, double density, std::uint64_t seed) {
    return simulate(raster, day, density, rules, seed).image.values;
  };
}

SweepConfig::SweepConfig() {
  for (int s = 2; s <= 30; s += 2) separations_um.push_back(s);
}

void SweepConfig::validate() const {
  if (widths_um.empty() || separations_um.empty() || days.empty() || densities.empty()) {
    throw std::invalid_argument("sweep grid has an empty axis");
  }
  for (double w : widths_um)
    if (!(w > 0)) throw std::invalid_argument("line widths must be positive");
  for (std::size_t i = 0; i < separations_um.size(); ++i) {
    if (!(separations_um[i] > 0)) throw std::invalid_argument("separations must be positive");
    if (i > 0 && !(separations_um[i] > separations_um[i - 1])) {
      throw std::invalid_argument("separation ladder must be strictly increasing");
    }
  }
  for (int d : days) check_day_density(d, 0.0);
  for (double r : densities) check_day_density(0, r);
  if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  alignment.validate();
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

MinSeparation min_separation(const Predictor& predict, double width_um, const SweepConfig& cfg) {
  cfg.validate();
  MinSeparation out;
  out.summary.width_um = width_um;
  std::vector<double> values;
  std::uint64_t point = 0;
  for (int day : cfg.days) {
    for (double density : cfg.densities) {
      std::vector<bool> verdicts;
      for (double sep : cfg.separations_um) {
        const TopographyRaster raster = rasterize(TopographySpec::lines(width_um, sep, cfg.line_angle_deg), cfg.frame);
        AlignmentScore pooled;
        for (int r = 0; r < cfg.replicates; ++r) {
          const std::uint64_t seed = stream_seed(cfg.seed, "sweep", point++);
          const Grid image = predict(raster, day, density, seed);
          try {
            pooled += alignment_score(image, cfg.line_angle_deg, cfg.alignment, &raster.values);
          } catch (const std::invalid_argument&) {
            // An empty prediction contributes no cells.
          }
        }
        AlignmentRecord rec{width_um, sep, day, density, pooled.fraction, is_aligned(pooled, cfg.alignment),
                            pooled.oriented};
        verdicts.push_back(rec.is_aligned);
        out.records.push_back(rec);
      }
      const Crossing c = find_crossing(cfg.separations_um, verdicts);
      out.summary.pairs.push_back(c);
      if (c.min_separation) {
        values.push_back(*c.min_separation);
      } else {
        ++out.summary.above_ladder;
      }
    }
  }
  out.summary.measured = static_cast<int>(values.size());
  if (!values.empty()) {
    out.summary.mean = mean_of(values);
    out.summary.stddev = sample_sd(values);
  }
  return out;
}

AlignmentFit fit_line(const std::vector<FitPoint>& points) {
  std::set<double> distinct;
  for (const FitPoint& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw std::invalid_argument("fit points must be finite");
    distinct.insert(p.x);
  }
  if (distinct.size() < 3) throw std::invalid_argument("line fit needs at least three distinct x values");
  const double n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const FitPoint& p : points) {
    mx += p.x / n;
    my += p.y / n;
  }
  double sxx = 0, sxy = 0;
  for (const FitPoint& p : points) {
    sxx += (p.x - mx) * (p.x - mx);
    sxy += (p.x - mx) * (p.y - my);
  }
  AlignmentFit f;
  f.points = points;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (const FitPoint& p : points) {
    const double r = p.y - (f.intercept + f.slope * p.x);
    rss += r * r;
  }
  const double s2 = rss / (n - 2);
  f.residual_sd = std::sqrt(s2);
  f.slope_err = std::sqrt(s2 / sxx);
  f.intercept_err = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  return f;
}

SweepResult run_sweep(const Predictor& predict, const SweepConfig& cfg) {
  cfg.validate();
  SweepResult result;
  result.config = cfg;
  std::vector<FitPoint> points;
  for (double w : cfg.widths_um) {
    MinSeparation ms = min_separation(predict, w, cfg);
    result.records.insert(result.records.end(), ms.records.begin(), ms.records.end());
    if (ms.summary.has_value()) points.push_back({w, ms.summary.mean, ms.summary.stddev});
    result.widths.push_back(std::move(ms.summary));
  }
  std::set<double> distinct;
  for (const FitPoint& p : points) distinct.insert(p.x);
  if (distinct.size() >= 3) result.fit = fit_line(points);
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<AlignmentRecord>& records) {
  std::ostringstream out;
  out << "width_um,separation_um,day,density,aligned_fraction,is_aligned\n";
  out.precision(17);
  for (const AlignmentRecord& r : records) {
    out << r.width_um << ',' << r.separation_um << ',' << r.day << ',' << r.density << ',' << r.aligned_fraction << ','
        << (r.is_aligned ? 1 : 0) << '\n';
  }
  write_text_file(path, out.str());
}

void write_fit_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "kind,width_um,value,error,measured_pairs,above_ladder_pairs\n";
  for (const WidthSummary& w : result.widths) {
    out << "min_separation," << w.width_um << ',';
    if (w.has_value()) {
      out << w.mean << ',' << w.stddev;
    } else {
      out << "above_ladder,";
    }
    out << ',' << w.measured << ',' << w.above_ladder << '\n';
  }
  if (result.fit) {
    out << "slope,," << result.fit->slope << ',' << result.fit->slope_err << ",,\n";
    out << "intercept,," << result.fit->intercept << ',' << result.fit->intercept_err << ",,\n";
  }
  write_text_file(path, out.str());
}

std::string fit_report(const SweepResult& result) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "minimum line separation for alignment\n";
  out << "width_um  min_sep_um  sd_um  measured  above_ladder  non_monotone\n";
  for (const WidthSummary& w : result.widths) {
    int flagged = 0;
    for (const Crossing& c : w.pairs) flagged += c.non_monotone ? 1 : 0;
    out << std::setw(8) << w.width_um << "  ";
    if (w.has_value()) {
      out << std::setw(10) << w.mean << "  " << std::setw(5) << w.stddev;
    } else {
      out << std::setw(10) << "above" << "  " << std::setw(5) << "-";
    }
    out << "  " << std::setw(8) << w.measured << "  " << std::setw(12) << w.above_ladder << "  " << std::setw(12)
        << flagged << '\n';
  }
  if (result.fit) {
    const AlignmentFit& f = *result.fit;
    out << std::setprecision(3);
    out << "slope " << f.slope << " +/- " << f.slope_err << " um/um\n";
    out << "intercept " << f.intercept << " +/- " << f.intercept_err << " um\n";
    out << "trend band: min_sep = (" << f.intercept << " +/- " << f.intercept_err << ") + (" << f.slope << " +/- "
        << f.slope_err << ") * width\n";
  } else {
    out << "no fit: fewer than three widths aligned within the ladder\n";
  }
  return out.str();
}

namespace {

struct Canvas {
  RgbImage img;
  void put(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    std::uint8_t* p = img.at(x, y);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= steps; ++i) {
      put(x0 + (x1 - x0) * i / steps, y0 + (y1 - y0) * i / steps, c);
    }
  }
};

}  // namespace

RgbImage render_fit_plot(const SweepResult& result, int width, int height) {
  if (width < 64 || height < 64) throw std::invalid_argument("plot must be at least 64 x 64 pixels");
  Canvas cv{RgbImage(width, height)};
  std::fill(cv.img.pixels.begin(), cv.img.pixels.end(), 255);
  const int left = 40, right = width - 16, top = 16, bottom = height - 32;

  double x_max = 1.0, y_max = 1.0;
  for (double w : result.config.widths_um) x_max = std::max(x_max, w);
  for (double s : result.config.separations_um) y_max = std::max(y_max, s);
  x_max *= 1.1;
  y_max *= 1.1;
  auto px = [&](double x) { return left + static_cast<int>(std::lround(x / x_max * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround(y / y_max * (bottom - top))); };

  const std::array<std::uint8_t, 3> black{0, 0, 0}, grey{200, 200, 200}, red{220, 30, 30}, band{250, 205, 205},
      blue{30, 60, 200};
  if (result.fit) {
    const AlignmentFit& f = *result.fit;
    for (int x = left; x <= right; ++x) {
      const double wx = (x - left) * x_max / (right - left);
      const double y0 = f.intercept - f.intercept_err + (f.slope - f.slope_err) * wx;
      const double y1 = f.intercept + f.intercept_err + (f.slope + f.slope_err) * wx;
      cv.line(x, std::clamp(py(std::max(y0, y1)), top, bottom), x, std::clamp(py(std::min(y0, y1)), top, bottom), band);
    }
  }
  // Axes with a tick every 5 um.
  for (double t = 5; t < y_max; t += 5) cv.line(left, py(t), right, py(t), grey);
  for (double t = 5; t < x_max; t += 5) cv.line(px(t), bottom, px(t), bottom + 4, black);
  cv.line(left, bottom, right, bottom, black);
  cv.line(left, top, left, bottom, black);
  if (result.fit) {
    const AlignmentFit& f = *result.fit;
    cv.line(px(0), py(f.intercept), px(x_max), py(f.intercept + f.slope * x_max), red);
  }
  for (const WidthSummary& w : result.widths) {
    if (!w.has_value()) continue;
    const int x = px(w.width_um), y = py(w.mean);
    cv.line(x, py(w.mean - w.stddev), x, py(w.mean + w.stddev), blue);
    cv.line(x - 3, py(w.mean - w.stddev), x + 3, py(w.mean - w.stddev), blue);
    cv.line(x - 3, py(w.mean + w.stddev), x + 3, py(w.mean + w.stddev), blue);
    for (int dy = -2; dy <= 2; ++dy) cv.line(x - 2, y + dy, x + 2, y + dy, blue);
  }
  return cv.img;
}

}  // namespace celltopo
