#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "deepway/core.hpp"
#include "deepway/image_io.hpp"
#include "deepway/order.hpp"
#include "deepway/plan.hpp"

namespace deepway {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct RenderStyle {
  int scale = 1;  // integer upscaling of the mask
  double disc_radius = 3.0;
  double stroke_width = 1.0;
  Rgb background{255, 255, 255};
  Rgb occupied{0, 0, 0};
  Rgb path{0, 170, 0};
  Rgb side_a{220, 30, 30};
  Rgb side_b{30, 60, 220};
  Rgb other{240, 150, 0};
};

// RGB canvas in output pixels; drawing calls take mask coordinates.
class Canvas {
 public:
  Canvas(const OccupancyGrid& grid, const RenderStyle& style) : style_(style) {
    if (style.scale < 1) throw argument_error("render scale must be >= 1");
    img_.width = grid.width() * style.scale;
    img_.height = grid.height() * style.scale;
    img_.channels = 3;
    img_.data.resize(static_cast<std::size_t>(img_.width) * img_.height * 3);
    for (int y = 0; y < img_.height; ++y)
      for (int x = 0; x < img_.width; ++x)
        put(x, y, grid.occupied(x / style.scale, y / style.scale) ? style.occupied : style.background);
  }

  void disc(Point centre, double radius, Rgb c) {
    const double s = style_.scale;
    const double cx = (centre.x + 0.5) * s - 0.5, cy = (centre.y + 0.5) * s - 0.5, r = radius * s;
    for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y)
      for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) put(x, y, c);
  }

  // Stroke of the given half-width around segment a-b.
  void segment(Point a, Point b, double half_width, Rgb c) {
    const double s = style_.scale;
    const Point p{(a.x + 0.5) * s - 0.5, (a.y + 0.5) * s - 0.5}, q{(b.x + 0.5) * s - 0.5, (b.y + 0.5) * s - 0.5};
    const double w = std::max(0.5, half_width * s);
    const Point d = q - p;
    const double len2 = dot(d, d);
    for (int y = static_cast<int>(std::floor(std::min(p.y, q.y) - w)); y <= static_cast<int>(std::ceil(std::max(p.y, q.y) + w)); ++y)
      for (int x = static_cast<int>(std::floor(std::min(p.x, q.x) - w)); x <= static_cast<int>(std::ceil(std::max(p.x, q.x) + w)); ++x) {
        const Point v{double(x), double(y)};
        const double t = len2 > 0 ? std::clamp(dot(v - p, d) / len2, 0.0, 1.0) : 0.0;
        if (distance(v, p + d * t) <= w) put(x, y, c);
      }
  }

  void polyline(const std::vector<Pixel>& pixels, Rgb c) {
    const double hw = style_.stroke_width / 2.0;
    if (pixels.size() == 1) segment(Point{double(pixels[0].x), double(pixels[0].y)}, Point{double(pixels[0].x), double(pixels[0].y)}, hw, c);
    for (std::size_t i = 1; i < pixels.size(); ++i)
      segment({double(pixels[i - 1].x), double(pixels[i - 1].y)}, {double(pixels[i].x), double(pixels[i].y)}, hw, c);
  }

  const Image& image() const { return img_; }

 private:
  void put(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    auto* px = &img_.data[(static_cast<std::size_t>(y) * img_.width + x) * 3];
    px[0] = c.r;
    px[1] = c.g;
    px[2] = c.b;
  }

  RenderStyle style_;
  Image img_;
};

// Mask in black, the planned path as a stroke, waypoints as discs on top.
// Route waypoints are coloured by group; loose waypoints use the third colour.
inline Image render_overlay(const OccupancyGrid& grid, const RouteOrder* route, const PathPlan* plan,
                            const std::vector<Waypoint>& loose = {}, const RenderStyle& style = {}) {
  Canvas canvas(grid, style);
  if (plan) canvas.polyline(plan->pixels, style.path);
  for (const auto& w : loose) canvas.disc(w.position, style.disc_radius, style.other);
  if (route)
    for (std::size_t i = 0; i < route->sequence.size(); ++i)
      canvas.disc(route->sequence[i].position, style.disc_radius, route->groups.at(i) == 'A' ? style.side_a : style.side_b);
  return canvas.image();
}

}  // namespace deepway
