#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deepway/decode.hpp"
#include "deepway/eval.hpp"
#include "deepway/nn/targets.hpp"
#include "deepway/order.hpp"
#include "deepway/plan.hpp"

namespace deepway {

struct PipelineConfig {
  DecodeConfig decode;
  OrderConfig order;
  PlanConfig plan;
};

struct PipelineResult {
  std::vector<Waypoint> waypoints;  // input to ordering
  OrderResult order;
  PathPlan plan;
};

// Network detections for one mask: threshold, decode, suppress.
template <typename T>
std::vector<Waypoint> detect(const nn::Model<T>& model, const OccupancyGrid& grid, const DecodeConfig& cfg) {
  return suppress(decode(nn::predict(model, grid), cfg), cfg.d_c);
}

inline std::vector<Waypoint> truth_waypoints(const FieldTruth& truth) {
  std::vector<Waypoint> out;
  for (Point p : truth.waypoints_a) out.push_back({p, 1.0});
  for (Point p : truth.waypoints_b) out.push_back({p, 1.0});
  return out;
}

// Ordering and planning for a set of waypoints. Occupied endpoints are
// snapped within the suppression distance.
inline PipelineResult plan_waypoints(const OccupancyGrid& grid, std::vector<Waypoint> waypoints, const PipelineConfig& cfg) {
  PipelineResult r;
  r.waypoints = std::move(waypoints);
  r.order = order_waypoints(r.waypoints, grid, cfg.order);
  PlanConfig plan_cfg = cfg.plan;
  plan_cfg.snap_radius = cfg.decode.d_c;
  r.plan = plan_route(grid, r.order.route, plan_cfg);
  return r;
}

template <typename T>
PipelineResult run_pipeline(const nn::Model<T>& model, const OccupancyGrid& grid, const PipelineConfig& cfg) {
  return plan_waypoints(grid, detect(model, grid, cfg.decode), cfg);
}

// Coverage of one image; pipeline failures score 0 with the error kept.
struct ImageCoverage {
  double score = 0.0;
  std::optional<CoverageReport> report;
  std::string error;
};

inline ImageCoverage evaluate_coverage(const OccupancyGrid& grid, const std::vector<Waypoint>& waypoints,
                                       std::size_t total_corridors, const PipelineConfig& cfg) {
  ImageCoverage c;
  try {
    const auto r = plan_waypoints(grid, waypoints, cfg);
    c.report = coverage_score(grid, r.plan, r.order.route, total_corridors);
    c.score = c.report->score;
  } catch (const error& e) {
    c.error = e.what();
  }
  return c;
}

}  // namespace deepway
