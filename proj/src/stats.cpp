#include "celltopo/stats.hpp"

#include "celltopo/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace celltopo {

namespace {

// Linear-interpolated percentile of a sorted sample, q in [0, 1].
double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

void check_image(const Grid& image, const char* what) {
  if (image.rank() != 3 || image.dim(0) != 1 || image.size() == 0) {
    throw std::invalid_argument(std::string(what) + " needs a non-empty 1 x H x W image, got " +
                                shape_string(image.shape()));
  }
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

void check_counts(long N, long K, long n) {
  if (N < 1 || K < 0 || n < 0 || K > N || n > N) {
    throw std::invalid_argument("invalid hypergeometric parameters N=" + std::to_string(N) +
                                " K=" + std::to_string(K) + " n=" + std::to_string(n));
  }
}

// Log-probabilities of every support point, from the log pmf at the lower
// end of the support and the exact term ratio p(j+1)/p(j). The recurrence
// keeps relative accuracy in the far tail where direct lgamma differences
// lose digits.
struct Support {
  long lo = 0;
  std::vector<double> log_p;
};

Support hypergeom_support(long N, long K, long n) {
  Support s;
  s.lo = std::max(0L, n + K - N);
  const long hi = std::min(K, n);
  s.log_p.resize(static_cast<std::size_t>(hi - s.lo + 1));
  double acc = 0.0;
  for (long j = s.lo; j <= hi; ++j) {
    s.log_p[static_cast<std::size_t>(j - s.lo)] = acc;
    if (j < hi) {
      acc += std::log(static_cast<double>(K - j)) + std::log(static_cast<double>(n - j)) -
             std::log(static_cast<double>(j + 1)) - std::log(static_cast<double>(N - K - n + j + 1));
    }
  }
  double total = -std::numeric_limits<double>::infinity();
  for (double v : s.log_p) total = log_sum_exp(total, v);
  for (double& v : s.log_p) v -= total;
  return s;
}

}  // namespace

Grid normalize_image(const Grid& image) {
  check_image(image, "normalize_image");
  std::vector<double> sorted(image.values().begin(), image.values().end());
  std::sort(sorted.begin(), sorted.end());
  double lo = percentile(sorted, 0.01), hi = percentile(sorted, 0.99);
  Grid out = Grid::zeros_like(image);
  if (!(hi > lo)) {
    // Sparse frames (under 1% lit) fall back to the full range.
    lo = sorted.front();
    hi = sorted.back();
    if (!(hi > lo)) return out;
  }
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = std::clamp((image[i] - lo) / (hi - lo), 0.0, 1.0);
  return out;
}

Grid crop_resize(const Grid& image, int window, int out, std::uint64_t seed) {
  check_image(image, "crop_resize");
  if (out < 1 || window < out || window % out != 0) {
    throw std::invalid_argument("crop window " + std::to_string(window) + " must be a multiple of output " +
                                std::to_string(out));
  }
  const int H = image.dim(1), W = image.dim(2);
  if (H < window || W < window) {
    throw std::invalid_argument("image " + std::to_string(H) + "x" + std::to_string(W) +
                                " is smaller than the crop window " + std::to_string(window));
  }
  Rng rng = make_rng(seed, "crop");
  const int y0 = std::uniform_int_distribution<int>(0, H - window)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, W - window)(rng);
  const int f = window / out;
  Grid result({1, out, out});
  for (int y = 0; y < out; ++y)
    for (int x = 0; x < out; ++x) {
      double s = 0.0;
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) s += image.at(0, y0 + y * f + dy, x0 + x * f + dx);
      result.at(0, y, x) = s / (f * f);
    }
  return result;
}

long BitMask::count() const { return std::count(bits.begin(), bits.end(), std::uint8_t{1}); }

ThresholdConfig ThresholdConfig::for_frame(const FrameConfig& frame) {
  const double r_px = 2.5 / frame.scale_um;
  return {0.25, std::numbers::pi * r_px * r_px};
}

std::vector<std::vector<int>> connected_components(const BitMask& mask) {
  std::vector<std::vector<int>> comps;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(mask.bits.size()); ++start) {
    if (!mask.bits[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
    std::vector<int> comp;
    stack.push_back(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.push_back(p);
      const int py = p / mask.width, px = p % mask.width;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = py + dy, x = px + dx;
          if (y < 0 || y >= mask.height || x < 0 || x >= mask.width) continue;
          const int q = y * mask.width + x;
          if (!mask.bits[static_cast<std::size_t>(q)] || seen[static_cast<std::size_t>(q)]) continue;
          seen[static_cast<std::size_t>(q)] = 1;
          stack.push_back(q);
        }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

BitMask cell_mask(const Grid& normalized, const ThresholdConfig& cfg) {
  check_image(normalized, "cell_mask");
  BitMask mask(normalized.dim(1), normalized.dim(2));
  for (std::size_t i = 0; i < normalized.size(); ++i) mask.bits[i] = normalized[i] >= cfg.tau ? 1 : 0;
  if (cfg.min_area_px > 0) {
    for (const auto& comp : connected_components(mask)) {
      if (static_cast<double>(comp.size()) >= cfg.min_area_px) continue;
      for (int p : comp) mask.bits[static_cast<std::size_t>(p)] = 0;
    }
  }
  return mask;
}

int SectionOccupancy::occupied_count() const {
  return static_cast<int>(std::count(occupied.begin(), occupied.end(), std::uint8_t{1}));
}

SectionOccupancy section_occupancy(const BitMask& mask, int g, int threshold) {
  if (g < 1 || mask.height % g != 0 || mask.width % g != 0) {
    throw std::invalid_argument("section grid " + std::to_string(g) + " does not divide a " +
                                std::to_string(mask.height) + "x" + std::to_string(mask.width) + " mask");
  }
  if (threshold < 1) throw std::invalid_argument("section occupancy threshold must be >= 1");
  SectionOccupancy occ;
  occ.g = g;
  occ.threshold = threshold;
  occ.counts.assign(static_cast<std::size_t>(g) * g, 0);
  const int sh = mask.height / g, sw = mask.width / g;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) ++occ.counts[static_cast<std::size_t>(y / sh) * g + static_cast<std::size_t>(x / sw)];
  occ.occupied.resize(occ.counts.size());
  for (std::size_t i = 0; i < occ.counts.size(); ++i) occ.occupied[i] = occ.counts[i] >= threshold ? 1 : 0;
  return occ;
}

double hypergeom_pmf(long N, long K, long n, long k) {
  check_counts(N, K, n);
  const long lo = std::max(0L, n + K - N), hi = std::min(K, n);
  if (k < lo || k > hi) return 0.0;
  return std::exp(hypergeom_support(N, K, n).log_p[static_cast<std::size_t>(k - lo)]);
}

double hypergeom_log_tail(long N, long K, long n, long k_obs) {
  check_counts(N, K, n);
  const Support s = hypergeom_support(N, K, n);
  const long hi = s.lo + static_cast<long>(s.log_p.size()) - 1;
  if (k_obs <= s.lo) return 0.0;
  double acc = -std::numeric_limits<double>::infinity();
  for (long j = hi; j >= k_obs; --j) acc = log_sum_exp(acc, s.log_p[static_cast<std::size_t>(j - s.lo)]);
  return std::min(acc, 0.0);
}

double hypergeom_tail(long N, long K, long n, long k_obs) {
  const double lt = hypergeom_log_tail(N, K, n, k_obs);
  if (lt == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::max(std::exp(lt), std::numeric_limits<double>::min());
}

double binomial_tail(long N, long K, long n, long k_obs) {
  check_counts(N, K, n);
  if (k_obs <= 0) return 1.0;
  if (k_obs > n) return 0.0;
  const double p = static_cast<double>(K) / static_cast<double>(N);
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  // Log terms of Binomial(n, p) by the ratio recurrence from j = 0.
  const double lr = std::log(p) - std::log1p(-p);
  double term = static_cast<double>(n) * std::log1p(-p);
  double total = -std::numeric_limits<double>::infinity();
  double tail = total;
  for (long j = 0; j <= n; ++j) {
    total = log_sum_exp(total, term);
    if (j >= k_obs) tail = log_sum_exp(tail, term);
    if (j < n) term += std::log(static_cast<double>(n - j)) - std::log(static_cast<double>(j + 1)) + lr;
  }
  return std::min(1.0, std::exp(tail - total));
}

RgbImage composite_image(const BitMask& pred, const BitMask& exp) {
  if (!pred.same_size(exp)) throw std::invalid_argument("composite needs masks of equal size");
  RgbImage img(pred.width, pred.height);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      std::uint8_t* px = img.at(x, y);
      const bool a = pred.at(y, x), b = exp.at(y, x);
      if (a && b) px[1] = 255;
      else if (a) px[2] = 255;
      else if (b) px[0] = 255;
    }
  return img;
}

namespace {

SectionComparison tally(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& exp) {
  SectionComparison c;
  c.N = static_cast<long>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    c.n += pred[i];
    c.K += exp[i];
    c.k += pred[i] & exp[i];
  }
  c.p = hypergeom_tail(c.N, c.K, c.n, c.k);
  c.log10_p = hypergeom_log_tail(c.N, c.K, c.n, c.k) / std::numbers::ln10;
  c.p_binomial = binomial_tail(c.N, c.K, c.n, c.k);
  return c;
}

}  // namespace

SectionComparison compare(const BitMask& pred, const BitMask& exp, int g, int threshold) {
  if (!pred.same_size(exp)) throw std::invalid_argument("compare needs masks of equal size");
  SectionComparison c = tally(section_occupancy(pred, g, threshold).occupied,
                              section_occupancy(exp, g, threshold).occupied);
  c.composite = composite_image(pred, exp);
  return c;
}

SectionComparison pixel_level_p(const BitMask& pred, const BitMask& exp) {
  if (!pred.same_size(exp)) throw std::invalid_argument("pixel_level_p needs masks of equal size");
  SectionComparison c = tally(pred.bits, exp.bits);
  c.composite = composite_image(pred, exp);
  return c;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  return "";
}

void write_comparison_csv(const std::filesystem::path& path, const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "image_id,N,K,n,k,p_section,p_pixel\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.image_id << ',' << r.N << ',' << r.K << ',' << r.n << ',' << r.k << ',' << r.p_section << ','
        << r.p_pixel << '\n';
  }
  write_text_file(path, out.str());
}

std::string comparison_report(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "image                 N     K     n     k   P(section)     P(pixel)\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-16s %6ld %5ld %5ld %5ld %12.4g%-3s %12.4g%s\n", r.image_id.c_str(), r.N, r.K,
                  r.n, r.k, r.p_section, significance_stars(r.p_section).c_str(), r.p_pixel,
                  significance_stars(r.p_pixel).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace celltopo
