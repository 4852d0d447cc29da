#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepway/core.hpp"
#include "deepway/datagen.hpp"
#include "deepway/nn/targets.hpp"

namespace deepway {

struct DecodeConfig {
  double t_c = 0.9;  // confidence threshold, strict
  double d_c = 8.0;  // suppression distance in pixels
  int k = 8;         // cell size in pixels

  void validate() const {
    if (!(t_c >= 0.0 && t_c <= 1.0)) throw config_error("t_c must lie in [0, 1]");
    if (!(d_c >= 0.0)) throw config_error("d_c must be >= 0");
    if (k < 1) throw config_error("k must be >= 1");
  }
};

// Cells with p > t_c become waypoints at k * (cell + (offset + 1) / 2),
// sorted by descending confidence, then cell row, then cell column.
inline std::vector<Waypoint> decode(const nn::PredictionGrid& pred, const DecodeConfig& config) {
  config.validate();
  struct Hit {
    Waypoint w;
    int row, col;
  };
  std::vector<Hit> hits;
  for (int row = 0; row < pred.u_h; ++row)
    for (int col = 0; col < pred.u_w; ++col) {
      const std::size_t i = pred.index(row, col);
      if (!(pred.p[i] > config.t_c)) continue;
      const Point pos{config.k * (col + (pred.dx[i] + 1.0) / 2.0), config.k * (row + (pred.dy[i] + 1.0) / 2.0)};
      hits.push_back({{pos, pred.p[i]}, row, col});
    }
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.w.confidence != b.w.confidence) return a.w.confidence > b.w.confidence;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  std::vector<Waypoint> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.w);
  return out;
}

// Greedy highest-confidence-first suppression: a point survives iff it is at
// least d_c away from every point that survived before it. Equal confidences
// keep their input order.
inline std::vector<Waypoint> suppress(const std::vector<Waypoint>& points, double d_c) {
  if (!(d_c >= 0.0)) throw argument_error("d_c must be >= 0");
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return points[a].confidence > points[b].confidence; });
  std::vector<Waypoint> kept;
  for (std::size_t i : order) {
    const bool clear = std::all_of(kept.begin(), kept.end(),
                                   [&](const Waypoint& k) { return distance(k.position, points[i].position) >= d_c; });
    if (clear) kept.push_back(points[i]);
  }
  return kept;
}

// ---- waypoint list files -------------------------------------------------------

inline nlohmann::json waypoints_to_json(const std::vector<Waypoint>& points) {
  auto j = nlohmann::json::array();
  for (const auto& w : points) j.push_back({{"x", w.position.x}, {"y", w.position.y}, {"confidence", w.confidence}});
  return j;
}

inline std::vector<Waypoint> waypoints_from_json(const nlohmann::json& j) {
  std::vector<Waypoint> out;
  try {
    if (!j.is_array()) throw format_error("waypoint list must be a JSON array");
    for (const auto& e : j) {
      Waypoint w{{e.at("x").get<double>(), e.at("y").get<double>()}, e.value("confidence", 1.0)};
      if (!std::isfinite(w.position.x) || !std::isfinite(w.position.y)) throw format_error("non-finite waypoint");
      if (!(w.confidence >= 0.0 && w.confidence <= 1.0)) throw format_error("waypoint confidence outside [0, 1]");
      out.push_back(w);
    }
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("waypoint list: ") + e.what());
  }
  return out;
}

inline void write_waypoints(const std::filesystem::path& path, const std::vector<Waypoint>& points) {
  write_json_file(path, waypoints_to_json(points));
}

inline std::vector<Waypoint> read_waypoints(const std::filesystem::path& path) {
  return waypoints_from_json(read_json_file(path));
}

}  // namespace deepway
