#pragma once

// Minimal raster plots: polylines and bars on a white RGB canvas with a frame.
// Axes carry no text; the plotted numbers are emitted separately.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "hnet/errors.hpp"
#include "hnet/png.hpp"

namespace hnet {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kRed{214, 39, 40};
inline constexpr Rgb kBlue{31, 119, 180};
inline constexpr Rgb kGray{200, 200, 200};

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending values
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max] of `values`; the last bin is closed.
/// Constant input gets a unit-wide range centred on the value.
inline Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ContractError("histogram: bins must be positive");
  Histogram h;
  h.counts.assign(bins, 0);
  double lo = 0.0, hi = 1.0;
  if (!values.empty()) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / bins);
  for (double v : values) {
    const auto k = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(k, bins - 1)];
  }
  return h;
}

class Canvas {
 public:
  Canvas(std::size_t width, std::size_t height, std::size_t margin = 24)
      : w_(width), h_(height), margin_(margin), px_(width * height * 3, 255) {
    if (width <= 2 * margin || height <= 2 * margin) throw ContractError("canvas smaller than its margins");
  }

  /// Data range mapped onto the plot area; degenerate ranges are widened.
  void set_range(double x0, double x1, double y0, double y1) {
    if (!(x1 > x0)) x1 = x0 + 1.0;
    if (!(y1 > y0)) {
      y0 -= 0.5;
      y1 += 0.5;
    }
    x0_ = x0, x1_ = x1, y0_ = y0, y1_ = y1;
  }

  void frame() {
    const double l = margin_, r = w_ - 1 - margin_, t = margin_, b = h_ - 1 - margin_;
    segment(l, t, r, t, kBlack);
    segment(r, t, r, b, kBlack);
    segment(r, b, l, b, kBlack);
    segment(l, b, l, t, kBlack);
  }

  /// Horizontal rule at data value y, e.g. zero.
  void hline(double y, Rgb c) { segment(margin_, py(y), w_ - 1 - margin_, py(y), c); }

  void polyline(std::span<const double> xs, std::span<const double> ys, Rgb c) {
    for (std::size_t i = 1; i < std::min(xs.size(), ys.size()); ++i)
      segment(px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), c);
    if (xs.size() == 1 && !ys.empty()) dot(px(xs[0]), py(ys[0]), c);
  }

  /// Filled bar over [x0, x1] from the bottom of the range up to y.
  void bar(double x0, double x1, double y, Rgb c) {
    const long a = std::lround(px(x0)), b = std::lround(px(x1)), top = std::lround(py(y)), bottom = std::lround(py(y0_));
    for (long x = std::min(a, b); x <= std::max(a, b); ++x)
      for (long yy = std::min(top, bottom); yy <= std::max(top, bottom); ++yy) set(x, yy, c);
  }

  void save(const std::filesystem::path& path) const { write_png_raw(path, h_, w_, 3, px_); }

 private:
  double px(double x) const { return margin_ + (x - x0_) / (x1_ - x0_) * static_cast<double>(w_ - 1 - 2 * margin_); }
  double py(double y) const {
    return static_cast<double>(h_ - 1 - margin_) - (y - y0_) / (y1_ - y0_) * static_cast<double>(h_ - 1 - 2 * margin_);
  }

  void set(long x, long y, Rgb c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
    std::copy(c.begin(), c.end(), px_.begin() + static_cast<std::ptrdiff_t>((y * static_cast<long>(w_) + x) * 3));
  }

  void dot(double x, double y, Rgb c) {
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) set(std::lround(x) + dx, std::lround(y) + dy, c);
  }

  void segment(double xa, double ya, double xb, double yb, Rgb c) {
    if (!std::isfinite(xa) || !std::isfinite(ya) || !std::isfinite(xb) || !std::isfinite(yb)) return;
    const auto steps = static_cast<long>(std::ceil(std::max(std::abs(xb - xa), std::abs(yb - ya)))) + 1;
    for (long i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(steps);
      set(std::lround(xa + t * (xb - xa)), std::lround(ya + t * (yb - ya)), c);
    }
  }

  std::size_t w_, h_, margin_;
  double x0_ = 0.0, x1_ = 1.0, y0_ = 0.0, y1_ = 1.0;
  std::vector<std::uint8_t> px_;
};

/// Range covering every finite value of all series.
inline std::array<double, 2> value_range(std::initializer_list<std::span<const double>> series) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto s : series)
    for (double v : s)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (lo > hi) return {0.0, 1.0};
  return {lo, hi};
}

}  // namespace hnet
