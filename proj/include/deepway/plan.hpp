#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepway/core.hpp"
#include "deepway/datagen.hpp"
#include "deepway/order.hpp"

namespace deepway {

struct GridPath {
  std::vector<Pixel> pixels;
  double cost = 0.0;
};

struct PlanConfig {
  double w = 2.0;             // heuristic weight, >= 1
  double snap_radius = 8.0;   // occupied endpoints move to a free pixel within this distance
  int inflation = 0;          // obstacle dilation radius in pixels
};

// Nearest free pixel to p within radius; unreachable_error when none.
inline Pixel snap_to_free(const OccupancyGrid& grid, Point p, double radius) {
  if (!grid.contains(p)) throw bounds_error("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside the grid");
  const auto spot = nearest_free(grid, p, radius);
  if (!spot) throw unreachable_error("no free pixel within " + std::to_string(radius) + " px of (" + std::to_string(p.x) + ", " +
                                     std::to_string(p.y) + ")");
  return nearest_pixel(*spot);
}

// Weighted A* on the 8-connected pixel graph: axis steps cost 1, diagonal
// steps sqrt(2), f = g + w * euclidean distance to the goal. A diagonal step
// between two occupied orthogonal neighbours is forbidden. Equal f is broken
// by larger g, then by insertion order, so results are fully deterministic.
inline GridPath astar(const OccupancyGrid& grid, Pixel start, Pixel goal, double w = 1.0) {
  if (!(w >= 1.0)) throw argument_error("heuristic weight must be >= 1");
  if (!grid.in_bounds(start) || !grid.in_bounds(goal)) throw bounds_error("astar endpoint outside the grid");
  if (grid.occupied(start) || grid.occupied(goal)) throw unreachable_error("astar endpoint is occupied");

  const int width = grid.width();
  const std::size_t n = static_cast<std::size_t>(grid.width()) * grid.height();
  auto id = [&](int x, int y) { return static_cast<std::size_t>(y) * width + x; };
  auto h = [&](int x, int y) { return std::hypot(double(x - goal.x), double(y - goal.y)); };

  struct Entry {
    double f, g;
    std::uint64_t order;
    std::size_t node;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.f != b.f) return a.f > b.f;
      if (a.g != b.g) return a.g < b.g;
      return a.order > b.order;
    }
  };
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(n, inf);
  std::vector<std::size_t> parent(n, std::numeric_limits<std::size_t>::max());
  std::vector<std::uint8_t> closed(n, 0);
  std::priority_queue<Entry, std::vector<Entry>, Later> open;
  std::uint64_t counter = 0;

  const std::size_t s = id(start.x, start.y), t = id(goal.x, goal.y);
  g[s] = 0.0;
  open.push({w * h(start.x, start.y), 0.0, counter++, s});
  static constexpr int dxs[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int dys[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    if (closed[e.node] || e.g > g[e.node]) continue;
    closed[e.node] = 1;
    if (e.node == t) break;
    const int x = static_cast<int>(e.node % width), y = static_cast<int>(e.node / width);
    for (int k = 0; k < 8; ++k) {
      const int nx = x + dxs[k], ny = y + dys[k];
      if (!grid.in_bounds(nx, ny) || grid.occupied(nx, ny)) continue;
      const bool diagonal = dxs[k] != 0 && dys[k] != 0;
      if (diagonal && grid.occupied(nx, y) && grid.occupied(x, ny)) continue;
      const std::size_t m = id(nx, ny);
      if (closed[m]) continue;
      const double ng = e.g + (diagonal ? std::numbers::sqrt2 : 1.0);
      if (ng < g[m]) {
        g[m] = ng;
        parent[m] = e.node;
        open.push({ng + w * h(nx, ny), ng, counter++, m});
      }
    }
  }
  if (!closed[t]) throw unreachable_error("no path from (" + std::to_string(start.x) + ", " + std::to_string(start.y) + ") to (" +
                                          std::to_string(goal.x) + ", " + std::to_string(goal.y) + ")");
  GridPath path;
  path.cost = g[t];
  for (std::size_t v = t;; v = parent[v]) {
    path.pixels.push_back({static_cast<int>(v % width), static_cast<int>(v / width)});
    if (v == s) break;
  }
  std::reverse(path.pixels.begin(), path.pixels.end());
  return path;
}

// Dilates occupied pixels by a disc of the given radius.
inline OccupancyGrid inflate(const OccupancyGrid& grid, int radius) {
  if (radius < 0) throw argument_error("inflation radius must be >= 0");
  if (radius == 0) return grid;
  OccupancyGrid out = grid;
  for (int y = 0; y < grid.height(); ++y)
    for (int x = 0; x < grid.width(); ++x) {
      if (!grid.occupied(x, y)) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (dx * dx + dy * dy <= radius * radius && grid.in_bounds(x + dx, y + dy)) out.set(x + dx, y + dy, true);
    }
  return out;
}

struct PathPlan {
  std::vector<Pixel> pixels;
  std::vector<std::size_t> legs;  // index in pixels where each leg starts
  double cost = 0.0;
};

// Chains A* legs between consecutive route waypoints. Each leg after the
// first starts at the pixel the previous one ended on, which appears once.
// A single-waypoint route yields a one-pixel plan with no legs.
inline PathPlan plan_route(const OccupancyGrid& grid, const RouteOrder& order, const PlanConfig& cfg = {}) {
  if (order.sequence.empty()) throw argument_error("plan_route: empty route");
  const OccupancyGrid work = inflate(grid, cfg.inflation);
  std::vector<Pixel> stops;
  for (const auto& wp : order.sequence) stops.push_back(snap_to_free(work, clamp_to(work, wp.position), cfg.snap_radius));

  PathPlan plan;
  plan.pixels.push_back(stops[0]);
  for (std::size_t i = 0; i + 1 < stops.size(); ++i) {
    GridPath leg;
    try {
      leg = astar(work, stops[i], stops[i + 1], cfg.w);
    } catch (const unreachable_error& e) {
      throw partial_plan_error("leg " + std::to_string(i) + " of " + std::to_string(stops.size() - 1) + " unreachable after " +
                                   std::to_string(i) + " completed legs: " + e.what(),
                               i);
    }
    plan.legs.push_back(plan.pixels.size() - 1);
    plan.pixels.insert(plan.pixels.end(), leg.pixels.begin() + 1, leg.pixels.end());
    plan.cost += leg.cost;
  }
  return plan;
}

// ---- plan files --------------------------------------------------------------------

inline nlohmann::json plan_to_json(const PathPlan& p) {
  auto px = nlohmann::json::array();
  for (Pixel q : p.pixels) px.push_back({q.x, q.y});
  return {{"pixels", px}, {"legs", p.legs}, {"cost", p.cost}};
}

inline PathPlan plan_from_json(const nlohmann::json& j) {
  PathPlan p;
  try {
    for (const auto& q : j.at("pixels")) {
      if (q.size() != 2) throw format_error("plan: each pixel must be [x, y]");
      p.pixels.push_back({q[0].get<int>(), q[1].get<int>()});
    }
    p.legs = j.at("legs").get<std::vector<std::size_t>>();
    p.cost = j.at("cost").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("plan: ") + e.what());
  }
  for (std::size_t s : p.legs)
    if (s >= std::max<std::size_t>(p.pixels.size(), 1)) throw format_error("plan: leg start beyond the pixel list");
  return p;
}

inline void write_plan(const std::filesystem::path& path, const PathPlan& p) { write_json_file(path, plan_to_json(p)); }
inline PathPlan read_plan(const std::filesystem::path& path) { return plan_from_json(read_json_file(path)); }

}  // namespace deepway
