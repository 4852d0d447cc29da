#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepway/core.hpp"
#include "deepway/decode.hpp"
#include "deepway/order.hpp"
#include "deepway/plan.hpp"

namespace deepway {

// ---- waypoint matching and AP --------------------------------------------------------

struct Match {
  std::size_t prediction, truth;
  double distance;
};

struct MatchResult {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::vector<Match> matches;
};

// Predictions in descending confidence (stable for ties) each take the
// nearest still-unmatched truth within r_c (ties: lower truth index) as a
// true positive; otherwise they are false positives. Unmatched truths are
// false negatives.
inline MatchResult match_waypoints(const std::vector<Waypoint>& pred, const std::vector<Point>& truth, double r_c) {
  if (!(r_c > 0.0)) throw argument_error("r_c must be > 0");
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pred[a].confidence > pred[b].confidence; });
  std::vector<char> used(truth.size(), 0);
  MatchResult r;
  for (std::size_t i : order) {
    std::size_t best = truth.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (used[j]) continue;
      const double d = distance(pred[i].position, truth[j]);
      if (d <= r_c && d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best == truth.size()) {
      ++r.fp;
    } else {
      used[best] = 1;
      ++r.tp;
      r.matches.push_back({i, best, best_d});
    }
  }
  r.fn = truth.size() - r.tp;
  return r;
}

struct ImageDetections {
  std::vector<Waypoint> predictions;  // raw decoded candidates with confidences
  std::vector<Point> truth;
};

struct PrPoint {
  double t_c = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0;
  bool defined = false;  // false when nothing survives the threshold
};

struct ApResult {
  double r_c = 0.0;
  double ap = 0.0;
  std::vector<PrPoint> curve;
};

struct ApConfig {
  double d_c = 8.0;
  double step = 0.1;
};

// Sweeps t_c over {0, step, ..., 1}; at each threshold predictions with
// confidence > t_c are suppressed at d_c and matched, and counts are summed
// over all images. AP is the area under the precision-recall curve with
// precision interpolated to be non-increasing in recall. Thresholds where no
// prediction survives carry no precision and do not contribute.
inline ApResult average_precision(const std::vector<ImageDetections>& images, double r_c, const ApConfig& cfg = {}) {
  if (images.empty()) throw argument_error("average_precision needs at least one image");
  if (!(cfg.step > 0.0 && cfg.step <= 1.0)) throw argument_error("threshold step must lie in (0, 1]");
  std::size_t truths = 0;
  for (const auto& im : images) truths += im.truth.size();
  if (truths == 0) throw undefined_metric_error("recall is undefined: no ground-truth waypoints");

  ApResult r;
  r.r_c = r_c;
  const int steps = static_cast<int>(std::lround(1.0 / cfg.step));
  for (int s = 0; s <= steps; ++s) {
    PrPoint p;
    p.t_c = std::min(1.0, s * cfg.step);
    for (const auto& im : images) {
      std::vector<Waypoint> kept;
      for (const auto& w : im.predictions)
        if (w.confidence > p.t_c) kept.push_back(w);
      const auto m = match_waypoints(suppress(kept, cfg.d_c), im.truth, r_c);
      p.tp += m.tp;
      p.fp += m.fp;
      p.fn += m.fn;
    }
    p.recall = static_cast<double>(p.tp) / static_cast<double>(truths);
    p.defined = p.tp + p.fp > 0;
    p.precision = p.defined ? static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp) : 0.0;
    r.curve.push_back(p);
  }

  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  for (const auto& p : r.curve)
    if (p.defined) pts.push_back({p.recall, p.precision});
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = pts.size(); i-- > 1;) pts[i - 1].second = std::max(pts[i - 1].second, pts[i].second);
  double prev_recall = 0.0;
  for (const auto& [rec, prec] : pts) {
    r.ap += (rec - prev_recall) * prec;
    prev_recall = rec;
  }
  return r;
}

// ---- coverage -------------------------------------------------------------------------

struct TraversalVerdict {
  std::size_t leg = 0;                 // index into plan.legs
  std::array<int, 4> crossings{};      // against the previous traversal
  bool covered = false;
  std::string reason;
};

struct CoverageReport {
  std::size_t covered = 0;
  std::size_t total = 0;  // corridors in the field
  double score = 0.0;
  std::vector<TraversalVerdict> verdicts;
};

namespace detail {

inline std::vector<Point> leg_points(const PathPlan& plan, std::size_t leg) {
  const std::size_t begin = plan.legs[leg];
  const std::size_t end = leg + 1 < plan.legs.size() ? plan.legs[leg + 1] : plan.pixels.size() - 1;
  std::vector<Point> out;
  for (std::size_t i = begin; i <= end; ++i) out.push_back({double(plan.pixels[i].x), double(plan.pixels[i].y)});
  return out;
}

// Points at fractions 1/5 .. 4/5 of the polyline's arc length.
inline std::array<Point, 4> quarter_points(const std::vector<Point>& poly) {
  std::vector<double> cum{0.0};
  for (std::size_t i = 1; i < poly.size(); ++i) cum.push_back(cum.back() + distance(poly[i - 1], poly[i]));
  std::array<Point, 4> out{};
  for (int k = 0; k < 4; ++k) {
    const double target = cum.back() * (k + 1) / 5.0;
    std::size_t i = 1;
    while (i < poly.size() && cum[i] < target) ++i;
    if (i >= poly.size()) {
      out[k] = poly.back();
      continue;
    }
    const double span = cum[i] - cum[i - 1];
    const double t = span > 0 ? (target - cum[i - 1]) / span : 0.0;
    out[k] = poly[i - 1] + (poly[i] - poly[i - 1]) * t;
  }
  return out;
}

// First point of the polyline whose coordinate along the rows equals
// `target`, or the vertex closest to it when the polyline never reaches it.
inline Point at_along(const std::vector<Point>& poly, double target, Angle angle) {
  Point best = poly.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const double d = std::fabs(along(poly[i], angle) - target);
    if (d < best_d) {
      best_d = d;
      best = poly[i];
    }
    if (i + 1 < poly.size()) {
      const double a0 = along(poly[i], angle), a1 = along(poly[i + 1], angle);
      if ((a0 - target) * (a1 - target) < 0) {
        const Point q = poly[i] + (poly[i + 1] - poly[i]) * ((target - a0) / (a1 - a0));
        return q;
      }
    }
  }
  return best;
}

}  // namespace detail

// Coverage of a planned route, counted in corridors. The legs that cross the
// field (between waypoints of different groups) are corridor traversals. Four
// points at equal arc-length spacing on each traversal are joined to the
// points of the previous traversal level with them along the row direction.
// A traversal covers a new corridor when at least one joining segment crosses exactly one row and none
// crosses two or more; one whose four segments to any earlier traversal all
// cross nothing repeats a corridor and is not counted. The first traversal
// counts when its successor validates it, or when it is the only one.
// score = covered / total_corridors, capped at 1.
inline CoverageReport coverage_score(const OccupancyGrid& grid, const PathPlan& plan, const RouteOrder& order,
                                     std::size_t total_corridors) {
  if (total_corridors < 1) throw argument_error("coverage needs at least one corridor");
  if (order.sequence.empty() || plan.legs.size() + 1 != order.sequence.size())
    throw alignment_error("plan has " + std::to_string(plan.legs.size()) + " legs for a route of " +
                          std::to_string(order.sequence.size()) + " waypoints");
  if (order.groups.size() != order.sequence.size()) throw alignment_error("route group tags do not match its waypoints");

  const auto breaks = order.corridor_breaks();
  std::vector<std::vector<Point>> polys;
  for (std::size_t leg : breaks) polys.push_back(detail::leg_points(plan, leg));
  // Joins the four marks of traversal i to the points of traversal j level
  // with them along the rows.
  auto joins = [&](std::size_t i, std::size_t j) {
    std::array<int, 4> c{};
    const auto marks = detail::quarter_points(polys[i]);
    for (int k = 0; k < 4; ++k) {
      const Point a = clamp_to(grid, marks[k]);
      const Point b = clamp_to(grid, detail::at_along(polys[j], along(marks[k], order.angle), order.angle));
      c[k] = segment_row_crossings(grid, a, b);
    }
    return c;
  };
  auto adjacent = [](const std::array<int, 4>& c) {
    return std::any_of(c.begin(), c.end(), [](int v) { return v == 1; }) &&
           std::none_of(c.begin(), c.end(), [](int v) { return v >= 2; });
  };
  auto same_corridor = [](const std::array<int, 4>& c) {
    return std::all_of(c.begin(), c.end(), [](int v) { return v == 0; });
  };

  CoverageReport r;
  r.total = total_corridors;
  for (std::size_t j = 0; j < breaks.size(); ++j) {
    TraversalVerdict v;
    v.leg = breaks[j];
    if (j == 0) {
      if (breaks.size() == 1) {
        v.covered = true;
        v.reason = "single traversal";
      } else {
        v.crossings = joins(1, 0);
        v.covered = adjacent(v.crossings);
        v.reason = v.covered ? "validated by the next traversal" : "next traversal is not in an adjacent corridor";
      }
    } else {
      v.crossings = joins(j, j - 1);
      v.covered = adjacent(v.crossings);
      v.reason = v.covered ? "adjacent to the previous traversal" : "not in the corridor next to the previous traversal";
      for (std::size_t m = 0; m + 1 < j && v.covered; ++m)
        if (same_corridor(joins(j, m))) {
          v.covered = false;
          v.reason = "repeats the corridor of traversal " + std::to_string(m);
        }
    }
    if (v.covered) ++r.covered;
    r.verdicts.push_back(std::move(v));
  }
  r.score = static_cast<double>(std::min(r.covered, r.total)) / static_cast<double>(r.total);
  return r;
}

// Corridor count of an unlabelled mask: rows crossed by the line through the
// image centre perpendicular to the rows, minus one.
inline std::size_t estimate_corridors(const OccupancyGrid& grid, Angle angle) {
  const Point centre{(grid.width() - 1) / 2.0, (grid.height() - 1) / 2.0};
  const auto seg = clip_to_grid(grid, centre, angle.normal());
  if (!seg) return 1;
  const int rows = segment_row_crossings(grid, seg->a, seg->b);
  return static_cast<std::size_t>(std::max(rows - 1, 1));
}

// ---- reports -----------------------------------------------------------------------------

inline nlohmann::json ap_to_json(const ApResult& r) {
  auto curve = nlohmann::json::array();
  for (const auto& p : r.curve)
    curve.push_back({{"t_c", p.t_c}, {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn},
                     {"precision", p.defined ? nlohmann::json(p.precision) : nlohmann::json(nullptr)}, {"recall", p.recall}});
  return {{"r_c", r.r_c}, {"ap", r.ap}, {"curve", curve}};
}

inline nlohmann::json coverage_to_json(const CoverageReport& c) {
  auto verdicts = nlohmann::json::array();
  for (const auto& v : c.verdicts)
    verdicts.push_back({{"leg", v.leg}, {"crossings", v.crossings}, {"covered", v.covered}, {"reason", v.reason}});
  return {{"covered", c.covered}, {"total", c.total}, {"score", c.score}, {"verdicts", verdicts}};
}

inline void write_pr_csv(const std::filesystem::path& path, const std::vector<ApResult>& results) {
  std::ofstream out(path);
  if (!out) throw storage_error("cannot open for writing: " + path.string());
  out << "r_c,t_c,tp,fp,fn,precision,recall\n";
  for (const auto& r : results)
    for (const auto& p : r.curve) {
      out << r.r_c << ',' << p.t_c << ',' << p.tp << ',' << p.fp << ',' << p.fn << ',';
      if (p.defined) out << p.precision;
      out << ',' << p.recall << '\n';
    }
  if (!out) throw storage_error("write failed: " + path.string());
}

}  // namespace deepway
