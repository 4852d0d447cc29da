#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepway/errors.hpp"

namespace deepway {

// Sub-pixel location in grid coordinates: x is the column, y the row, the
// origin sits on the centre of the top-left pixel.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
  Point operator+(Point o) const { return {x + o.x, y + o.y}; }
  Point operator-(Point o) const { return {x - o.x, y - o.y}; }
  Point operator*(double s) const { return {x * s, y * s}; }
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline double distance(Point a, Point b) { return norm(a - b); }

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

inline Pixel nearest_pixel(Point p) {
  return {static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))};
}

struct Waypoint {
  Point position;
  double confidence = 1.0;

  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

// Row orientation. Rows carry no heading, so theta and theta + pi name the
// same angle; the stored value is folded into (-pi/2, pi/2].
class Angle {
 public:
  Angle() = default;
  explicit Angle(double radians) : radians_(normalize(radians)) {}

  double radians() const { return radians_; }
  double degrees() const { return radians_ * 180.0 / std::numbers::pi; }
  Point direction() const { return {std::cos(radians_), std::sin(radians_)}; }
  // Unit normal, rotated +90 degrees from direction().
  Point normal() const { return {-std::sin(radians_), std::cos(radians_)}; }

  static double normalize(double r) {
    constexpr double pi = std::numbers::pi;
    double v = std::fmod(r, pi);
    if (v <= -pi / 2) v += pi;
    if (v > pi / 2) v -= pi;
    return v;
  }

  // Smallest difference between two orientations, in [0, pi/2].
  static double separation(Angle a, Angle b) {
    double d = std::fabs(a.radians_ - b.radians_);
    return std::min(d, std::numbers::pi - d);
  }

 private:
  double radians_ = 0.0;
};

class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(int height, int width) : height_(height), width_(width) {
    if (height < 1 || width < 1) throw argument_error("grid dimensions must be positive");
    cells_.assign(static_cast<std::size_t>(height) * width, 0);
  }
  OccupancyGrid(int height, int width, std::vector<std::uint8_t> cells)
      : height_(height), width_(width), cells_(std::move(cells)) {
    if (height < 1 || width < 1) throw argument_error("grid dimensions must be positive");
    if (cells_.size() != static_cast<std::size_t>(height) * width)
      throw argument_error("cell count does not match grid dimensions");
    for (auto& c : cells_)
      if (c > 1) throw argument_error("occupancy cells must be 0 or 1");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::span<const std::uint8_t> cells() const { return cells_; }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool in_bounds(Pixel p) const { return in_bounds(p.x, p.y); }
  // A point is inside when its nearest pixel is.
  bool contains(Point p) const {
    return p.x >= -0.5 && p.y >= -0.5 && p.x < width_ - 0.5 && p.y < height_ - 0.5;
  }

  std::uint8_t at(int x, int y) const { return cells_[index(x, y)]; }
  std::uint8_t at(Pixel p) const { return at(p.x, p.y); }
  bool occupied(int x, int y) const { return at(x, y) != 0; }
  bool occupied(Pixel p) const { return at(p) != 0; }

  void set(int x, int y, bool value) { cells_[index(x, y)] = value ? 1 : 0; }
  void set(Pixel p, bool value) { set(p.x, p.y, value); }

  std::size_t count_occupied() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
  }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> cells_;
};

// Moves p onto the nearest location that contains() accepts.
inline Point clamp_to(const OccupancyGrid& grid, Point p) {
  return {std::clamp(p.x, 0.0, grid.width() - 1.0), std::clamp(p.y, 0.0, grid.height() - 1.0)};
}

namespace detail {

struct SupercoverHit {
  Pixel pixel;
  double enter;
  double exit;
};

// Parameter range [lo, hi] of t in [0,1] for which a + t*d lies in [cell-0.5, cell+0.5].
inline bool slab(double a, double d, int cell, double& lo, double& hi) {
  if (d == 0.0) {
    lo = 0.0;
    hi = 1.0;
    return a >= cell - 0.5 && a <= cell + 0.5;
  }
  double t1 = (cell - 0.5 - a) / d;
  double t2 = (cell + 0.5 - a) / d;
  if (t1 > t2) std::swap(t1, t2);
  lo = std::max(t1, 0.0);
  hi = std::min(t2, 1.0);
  return lo <= hi;
}

}  // namespace detail

// Supercover rasterization: every pixel whose closed square meets the closed
// segment a-b, ordered from a to b. Pixels are computed in a canonical
// direction so raster_pixels(b, a) is exactly the reverse of raster_pixels(a, b).
inline std::vector<Pixel> raster_pixels(const OccupancyGrid& grid, Point a, Point b) {
  if (!grid.contains(a) || !grid.contains(b))
    throw bounds_error("segment endpoint outside the grid");

  const bool reversed = std::pair(b.x, b.y) < std::pair(a.x, a.y);
  if (reversed) std::swap(a, b);

  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  std::vector<detail::SupercoverHit> hits;

  const int col_first = static_cast<int>(std::ceil(std::min(a.x, b.x) - 0.5));
  const int col_last = static_cast<int>(std::floor(std::max(a.x, b.x) + 0.5));
  for (int i = col_first; i <= col_last; ++i) {
    double clo, chi;
    if (!detail::slab(a.x, dx, i, clo, chi)) continue;
    const double y0 = a.y + clo * dy;
    const double y1 = a.y + chi * dy;
    const int row_first = static_cast<int>(std::ceil(std::min(y0, y1) - 0.5));
    const int row_last = static_cast<int>(std::floor(std::max(y0, y1) + 0.5));
    for (int j = row_first; j <= row_last; ++j) {
      double rlo, rhi;
      if (!detail::slab(a.y, dy, j, rlo, rhi)) continue;
      const double enter = std::max(clo, rlo);
      const double exit = std::min(chi, rhi);
      if (enter > exit) continue;
      if (!grid.in_bounds(i, j)) continue;
      hits.push_back({{i, j}, enter, exit});
    }
  }

  std::sort(hits.begin(), hits.end(), [](const auto& l, const auto& r) {
    if (l.enter != r.enter) return l.enter < r.enter;
    if (l.exit != r.exit) return l.exit < r.exit;
    return l.pixel < r.pixel;
  });

  std::vector<Pixel> pixels;
  pixels.reserve(hits.size());
  for (const auto& h : hits) pixels.push_back(h.pixel);
  if (reversed) std::reverse(pixels.begin(), pixels.end());
  return pixels;
}

inline std::vector<std::uint8_t> raster_line(const OccupancyGrid& grid, Point a, Point b) {
  std::vector<std::uint8_t> samples;
  for (Pixel p : raster_pixels(grid, a, b)) samples.push_back(grid.at(p));
  return samples;
}

// Number of 0->1 transitions; a leading 1 counts as one.
inline int count_risings(std::span<const std::uint8_t> samples) {
  if (samples.empty()) throw argument_error("count_risings needs at least one sample");
  int count = 0;
  std::uint8_t prev = 0;
  for (auto s : samples) {
    if (s && !prev) ++count;
    prev = s;
  }
  return count;
}

// Distinct occupied runs crossed by the segment a-b.
inline int segment_row_crossings(const OccupancyGrid& grid, Point a, Point b) {
  const auto samples = raster_line(grid, a, b);
  return count_risings(samples);
}

}  // namespace deepway
