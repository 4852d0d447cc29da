#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepway/core.hpp"
#include "deepway/datagen.hpp"
#include "deepway/random.hpp"

namespace deepway {

// ---- clustering ----------------------------------------------------------------

struct DbscanResult {
  std::vector<int> labels;  // cluster id per point, -1 for noise
  std::vector<std::vector<std::size_t>> clusters;
  std::vector<std::size_t> noise;
};

// Textbook DBSCAN with the Euclidean metric. Neighbourhoods are closed balls
// (distance <= eps) that include the point itself. Points are scanned in index
// order and each cluster is expanded completely before the next one starts, so
// a border point reachable from two clusters joins the one discovered first.
inline DbscanResult dbscan(const std::vector<Point>& points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw argument_error("dbscan: eps must be > 0");
  if (min_pts < 1) throw argument_error("dbscan: min_pts must be >= 1");
  const std::size_t n = points.size();
  auto neighbours = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j)
      if (distance(points[i], points[j]) <= eps) out.push_back(j);
    return out;
  };

  constexpr int unvisited = -2, noise = -1;
  DbscanResult r;
  r.labels.assign(n, unvisited);
  for (std::size_t i = 0; i < n; ++i) {
    if (r.labels[i] != unvisited) continue;
    const auto seed = neighbours(i);
    if (seed.size() < min_pts) {
      r.labels[i] = noise;
      continue;
    }
    const int id = static_cast<int>(r.clusters.size());
    r.clusters.emplace_back();
    r.labels[i] = id;
    std::deque<std::size_t> queue(seed.begin(), seed.end());
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      if (r.labels[q] == noise) r.labels[q] = id;
      if (r.labels[q] != unvisited) continue;
      r.labels[q] = id;
      const auto more = neighbours(q);
      if (more.size() >= min_pts) queue.insert(queue.end(), more.begin(), more.end());
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (r.labels[i] == noise)
      r.noise.push_back(i);
    else
      r.clusters[static_cast<std::size_t>(r.labels[i])].push_back(i);
  }
  return r;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw argument_error("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// 2.5 times the median nearest-neighbour distance; 1 for fewer than two points.
inline double default_eps(const std::vector<Point>& points) {
  if (points.size() < 2) return 1.0;
  std::vector<double> nn;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < points.size(); ++j)
      if (i != j) best = std::min(best, distance(points[i], points[j]));
    nn.push_back(best);
  }
  return std::max(2.5 * median(nn), 1e-6);
}

// ---- row angle -------------------------------------------------------------------

struct Segment {
  Point a, b;
};

struct HoughParams {
  int threshold = 30;      // accumulator votes
  int min_length = 10;     // pixels, on the working raster
  int max_gap = 5;         // pixels
  int max_side = 512;      // the mask is downscaled to this long side
  int min_segments = 5;    // fewer segments than this triggers the fallback
  int angle_bins = 180;
  std::uint64_t seed = 0;  // order in which pixels are drawn
  int fallback_angles = 180;
  double fallback_offset = 0.1;  // sample spread, fraction of the image size
};

// Shrinks so the long side is at most max_side; a target pixel is occupied
// when any source pixel mapping onto it is.
inline OccupancyGrid downscale_max(const OccupancyGrid& g, int max_side) {
  const int side = std::max(g.width(), g.height());
  if (side <= max_side) return g;
  const double f = static_cast<double>(max_side) / side;
  const int w = std::max(1, static_cast<int>(std::ceil(g.width() * f)));
  const int h = std::max(1, static_cast<int>(std::ceil(g.height() * f)));
  OccupancyGrid out(h, w);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x)
      if (g.occupied(x, y))
        out.set(std::min(w - 1, static_cast<int>(x * f)), std::min(h - 1, static_cast<int>(y * f)), true);
  return out;
}

// Progressive probabilistic Hough transform. Pixels are drawn in a seeded
// random order and vote in a (theta, rho) accumulator; once a bin reaches the
// threshold the corresponding line is followed through the mask, allowing gaps
// of up to max_gap pixels, and its pixels are removed (their votes withdrawn).
// Lines spanning at least min_length pixels are returned.
inline std::vector<Segment> hough_segments(const OccupancyGrid& grid, const HoughParams& hp) {
  const int w = grid.width(), h = grid.height();
  const int n_theta = hp.angle_bins;
  const int n_rho = 2 * (w + h) + 1;
  const int rho_offset = (n_rho - 1) / 2;
  std::vector<double> cos_t(n_theta), sin_t(n_theta);
  for (int t = 0; t < n_theta; ++t) {
    const double th = t * std::numbers::pi / n_theta;
    cos_t[t] = std::cos(th);
    sin_t[t] = std::sin(th);
  }
  std::vector<int> acc(static_cast<std::size_t>(n_theta) * n_rho, 0);
  std::vector<std::uint8_t> mask(grid.cells().begin(), grid.cells().end());
  std::vector<std::uint8_t> voted(mask.size(), 0);
  std::vector<Pixel> pending;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[static_cast<std::size_t>(y) * w + x]) pending.push_back({x, y});

  auto bin = [&](int t, Pixel p) {
    return static_cast<std::size_t>(t) * n_rho + static_cast<std::size_t>(std::lround(p.x * cos_t[t] + p.y * sin_t[t]) + rho_offset);
  };
  auto at = [&](Pixel p) -> std::uint8_t& { return mask[static_cast<std::size_t>(p.y) * w + p.x]; };
  auto inside = [&](Pixel p) { return p.x >= 0 && p.y >= 0 && p.x < w && p.y < h; };

  Rng rng(hp.seed);
  std::vector<Segment> segments;
  std::size_t count = pending.size();
  while (count > 0) {
    const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(count) - 1));
    const Pixel p = pending[pick];
    pending[pick] = pending[--count];
    if (!at(p)) continue;

    int best = -1, best_t = 0;
    for (int t = 0; t < n_theta; ++t) {
      const int v = ++acc[bin(t, p)];
      if (v > best) {
        best = v;
        best_t = t;
      }
    }
    voted[static_cast<std::size_t>(p.y) * w + p.x] = 1;
    if (best < hp.threshold) continue;

    // Line direction is perpendicular to the bin's normal angle; step one pixel
    // along the dominant axis.
    const double a = -sin_t[best_t], b = cos_t[best_t];
    double sx, sy;
    if (std::fabs(a) > std::fabs(b)) {
      sx = a > 0 ? 1.0 : -1.0;
      sy = b / std::fabs(a);
    } else {
      sy = b > 0 ? 1.0 : -1.0;
      sx = a / std::fabs(b);
    }
    Pixel ends[2] = {p, p};
    for (int k = 0; k < 2; ++k) {
      const double dx = k ? -sx : sx, dy = k ? -sy : sy;
      double fx = p.x, fy = p.y;
      int gap = 0;
      for (;;) {
        fx += dx;
        fy += dy;
        const Pixel q{static_cast<int>(std::lround(fx)), static_cast<int>(std::lround(fy))};
        if (!inside(q)) break;
        if (at(q)) {
          gap = 0;
          ends[k] = q;
        } else if (++gap > hp.max_gap) {
          break;
        }
      }
    }
    const bool good = std::max(std::abs(ends[0].x - ends[1].x), std::abs(ends[0].y - ends[1].y)) >= hp.min_length;
    auto clear = [&](Pixel q) {
      if (!at(q)) return;
      const std::size_t i = static_cast<std::size_t>(q.y) * w + q.x;
      if (good && voted[i])
        for (int t = 0; t < n_theta; ++t) --acc[bin(t, q)];
      at(q) = 0;
    };
    clear(p);
    for (int k = 0; k < 2; ++k) {
      const double dx = k ? -sx : sx, dy = k ? -sy : sy;
      double fx = p.x, fy = p.y;
      Pixel q = p;
      while (q != ends[k]) {
        fx += dx;
        fy += dy;
        q = {static_cast<int>(std::lround(fx)), static_cast<int>(std::lround(fy))};
        if (!inside(q)) break;
        clear(q);
      }
    }
    if (good) segments.push_back({{double(ends[1].x), double(ends[1].y)}, {double(ends[0].x), double(ends[0].y)}});
  }
  return segments;
}

// Length-weighted mean orientation; orientations are doubled before averaging
// so that theta and theta + pi agree.
inline Angle mean_orientation(const std::vector<Segment>& segments) {
  double s = 0.0, c = 0.0;
  for (const auto& seg : segments) {
    const Point d = seg.b - seg.a;
    const double len = norm(d);
    const double th = std::atan2(d.y, d.x);
    s += len * std::sin(2.0 * th);
    c += len * std::cos(2.0 * th);
  }
  return Angle(0.5 * std::atan2(s, c));
}

// Clips the infinite line through p with direction d to the pixel-centre box
// of the grid.
inline std::optional<Segment> clip_to_grid(const OccupancyGrid& g, Point p, Point d) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  const double lo[2] = {0.0, 0.0}, hi[2] = {g.width() - 1.0, g.height() - 1.0};
  const double pc[2] = {p.x, p.y}, dc[2] = {d.x, d.y};
  for (int k = 0; k < 2; ++k) {
    if (std::fabs(dc[k]) < 1e-12) {
      if (pc[k] < lo[k] || pc[k] > hi[k]) return std::nullopt;
      continue;
    }
    double a = (lo[k] - pc[k]) / dc[k], b = (hi[k] - pc[k]) / dc[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1) return std::nullopt;
  return Segment{clamp_to(g, p + d * t0), clamp_to(g, p + d * t1)};
}

// Angle whose lines through a 3x3 pattern of points around the image centre
// cross the fewest occupied runs on average.
inline Angle fallback_angle(const OccupancyGrid& grid, const HoughParams& hp) {
  const Point centre{(grid.width() - 1) / 2.0, (grid.height() - 1) / 2.0};
  const double ox = hp.fallback_offset * grid.width(), oy = hp.fallback_offset * grid.height();
  std::vector<Point> samples;
  for (int j = -1; j <= 1; ++j)
    for (int i = -1; i <= 1; ++i) samples.push_back(clamp_to(grid, {centre.x + i * ox, centre.y + j * oy}));
  double best = std::numeric_limits<double>::infinity();
  Angle best_angle;
  for (int k = 0; k < hp.fallback_angles; ++k) {
    const Angle a(-std::numbers::pi / 2 + (k + 1) * std::numbers::pi / hp.fallback_angles);
    double total = 0.0;
    for (Point s : samples) {
      const auto seg = clip_to_grid(grid, s, a.direction());
      if (seg) total += segment_row_crossings(grid, seg->a, seg->b);
    }
    const double mean = total / static_cast<double>(samples.size());
    if (mean < best) {
      best = mean;
      best_angle = a;
    }
  }
  return best_angle;
}

struct AngleEstimate {
  Angle angle;
  bool used_fallback = false;
  std::size_t segments = 0;
};

inline AngleEstimate estimate_angle_detailed(const OccupancyGrid& grid, const HoughParams& hp = {}) {
  if (grid.count_occupied() == 0) throw no_content_error("cannot estimate a row angle on an empty grid");
  const auto small = downscale_max(grid, hp.max_side);
  const auto segments = hough_segments(small, hp);
  if (static_cast<int>(segments.size()) >= hp.min_segments) return {mean_orientation(segments), false, segments.size()};
  return {fallback_angle(grid, hp), true, segments.size()};
}

inline Angle estimate_angle(const OccupancyGrid& grid, const HoughParams& hp = {}) {
  return estimate_angle_detailed(grid, hp).angle;
}

// ---- clusters and groups ---------------------------------------------------------

// Coordinate across the rows: -x sin(a) + y cos(a).
inline double project(Point p, Angle a) { return dot(p, a.normal()); }
// Coordinate along the rows.
inline double along(Point p, Angle a) { return dot(p, a.direction()); }

struct Cluster {
  std::vector<Waypoint> members;
  std::vector<double> projections;

  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }
};

// Sorts members by projection across the rows, ties by x then y.
inline Cluster project_and_sort(const Cluster& c, Angle angle) {
  if (c.empty()) throw argument_error("project_and_sort: empty cluster");
  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> proj(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) proj[i] = project(c.members[i].position, angle);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (proj[a] != proj[b]) return proj[a] < proj[b];
    const Point pa = c.members[a].position, pb = c.members[b].position;
    if (pa.x != pb.x) return pa.x < pb.x;
    return pa.y < pb.y;
  });
  Cluster out;
  for (std::size_t i : idx) {
    out.members.push_back(c.members[i]);
    out.projections.push_back(proj[i]);
  }
  return out;
}

inline Cluster make_cluster(const std::vector<Waypoint>& members, Angle angle) {
  Cluster c;
  c.members = members;
  return project_and_sort(c, angle);
}

// Nearest free pixel centre to p within radius (ties: smaller y, then x).
inline std::optional<Point> nearest_free(const OccupancyGrid& g, Point p, double radius) {
  const Pixel c = nearest_pixel(clamp_to(g, p));
  if (!g.occupied(c)) return Point{double(c.x), double(c.y)};
  const int r = static_cast<int>(std::ceil(radius));
  std::optional<Point> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (int y = c.y - r; y <= c.y + r; ++y)
    for (int x = c.x - r; x <= c.x + r; ++x) {
      if (!g.in_bounds(x, y) || g.occupied(x, y)) continue;
      const double d = distance(p, {double(x), double(y)});
      if (d <= radius && d < best_d) {
        best_d = d;
        best = Point{double(x), double(y)};
      }
    }
  return best;
}

struct RefineConfig {
  // A pair separated by no row is a duplicate only if closer than this
  // fraction of the cluster's median spacing; farther pairs seen through a
  // hole in the row are kept.
  double duplicate_fraction = 0.5;
  double inserted_confidence = 0.5;
};

// Walks consecutive members of a projection-sorted cluster and repairs it by
// the number of rows r the connecting segment crosses: r = 1 is the expected
// single row, r = 0 marks a duplicate (the lower-confidence member goes),
// r >= 2 means up to r - 1 waypoints are missing and are inserted in the free
// gaps between the crossed runs.
inline Cluster refine_cluster(const Cluster& cluster, const OccupancyGrid& grid, const RefineConfig& cfg = {}) {
  if (cluster.projections.size() != cluster.members.size())
    throw argument_error("refine_cluster: cluster has no projections; call project_and_sort first");
  if (cluster.size() < 2) return cluster;
  for (std::size_t i = 1; i < cluster.size(); ++i)
    if (cluster.projections[i] < cluster.projections[i - 1]) throw argument_error("refine_cluster: cluster is not sorted");

  std::vector<double> gaps;
  for (std::size_t i = 1; i < cluster.size(); ++i)
    gaps.push_back(distance(cluster.members[i - 1].position, cluster.members[i].position));
  const double median_gap = median(gaps);
  const double duplicate_limit = cfg.duplicate_fraction * median_gap;

  Cluster out;
  out.members.push_back(cluster.members[0]);
  out.projections.push_back(cluster.projections[0]);
  for (std::size_t i = 1; i < cluster.size(); ++i) {
    const Waypoint& prev = out.members.back();
    const Waypoint& next = cluster.members[i];
    const Point a = clamp_to(grid, prev.position), b = clamp_to(grid, next.position);
    const auto pixels = raster_pixels(grid, a, b);
    std::vector<std::uint8_t> samples;
    for (Pixel p : pixels) samples.push_back(grid.at(p));
    const int r = count_risings(samples);

    if (r == 0 && distance(a, b) < duplicate_limit) {
      if (next.confidence > prev.confidence) {
        out.members.back() = next;
        out.projections.back() = cluster.projections[i];
      }
      continue;
    }
    if (r >= 2) {
      // Runs as [first, last] pixel index pairs along the segment.
      std::vector<std::pair<std::size_t, std::size_t>> runs;
      for (std::size_t k = 0; k < samples.size(); ++k) {
        if (!samples[k]) continue;
        if (k == 0 || !samples[k - 1]) runs.push_back({k, k});
        runs.back().second = k;
      }
      // A missing waypoint also widens the spacing, so the count is capped by
      // how many median gaps fit; the widest free stretches are filled first.
      const long fit = std::lround(distance(a, b) / std::max(median_gap, 1e-9)) - 1;
      const std::size_t missing = static_cast<std::size_t>(std::clamp<long>(fit, 0, r - 1));
      std::vector<std::size_t> chosen(runs.size() - 1);
      std::iota(chosen.begin(), chosen.end(), std::size_t{0});
      std::stable_sort(chosen.begin(), chosen.end(), [&](std::size_t x, std::size_t y) {
        return runs[x + 1].first - runs[x].second > runs[y + 1].first - runs[y].second;
      });
      chosen.resize(missing);
      std::sort(chosen.begin(), chosen.end());
      const double p0 = out.projections.back(), p1 = cluster.projections[i];
      const Point ab = b - a;
      const double len2 = dot(ab, ab);
      for (std::size_t g : chosen) {
        const Pixel lo = pixels[runs[g].second], hi = pixels[runs[g + 1].first];
        const Point mid{(lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0};
        const auto spot = nearest_free(grid, mid, std::max(2.0, distance(a, b)));
        if (!spot) continue;
        const double t = len2 > 0 ? std::clamp(dot(*spot - a, ab) / len2, 0.0, 1.0) : 0.0;
        out.members.push_back({*spot, cfg.inserted_confidence});
        out.projections.push_back(p0 + t * (p1 - p0));
      }
    }
    out.members.push_back(next);
    out.projections.push_back(cluster.projections[i]);
  }
  // Inserted points interpolate the projection, so order is preserved up to
  // the nudge; re-sort to keep the invariant exact.
  std::vector<std::size_t> idx(out.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return out.projections[x] < out.projections[y]; });
  Cluster sorted;
  for (std::size_t k : idx) {
    sorted.members.push_back(out.members[k]);
    sorted.projections.push_back(out.projections[k]);
  }
  return sorted;
}

struct Groups {
  Cluster a, b;
};

namespace detail {

struct Interval {
  double lo, hi;
};

inline double overlap(Interval x, const std::vector<Interval>& covered) {
  double total = 0.0;
  for (const auto& c : covered) total += std::max(0.0, std::min(x.hi, c.hi) - std::max(x.lo, c.lo));
  return total;
}

inline double covered_length(const std::vector<Interval>& covered) {
  double total = 0.0;
  for (const auto& c : covered) total += c.hi - c.lo;
  return total;
}

}  // namespace detail

// Splits clusters (noise points become singleton clusters) into the two field
// sides. The largest cluster seeds group A; every other cluster, largest
// first, joins the group whose covered projection intervals it overlaps
// least. Intervals are padded by half the typical spacing so singletons
// occupy a slot too. Equal overlaps go to the group whose mean position along
// the rows is nearer. Finally waypoints at the seams between merged clusters
// change group when that turns a bad same-side hop (not exactly one row
// crossed) into good ones on the other side.
inline Groups merge_into_groups(const std::vector<Cluster>& clusters, const std::vector<Waypoint>& noise, Angle angle,
                                const OccupancyGrid& grid) {
  std::vector<Cluster> all;
  for (const auto& c : clusters)
    if (!c.empty()) all.push_back(project_and_sort(c, angle));
  for (const auto& w : noise) all.push_back(make_cluster({w}, angle));
  if (all.empty()) throw argument_error("merge_into_groups: no waypoints");
  if (all.size() == 1)
    throw geometry_error("all " + std::to_string(all[0].size()) +
                         " waypoints form one cluster; the two field sides cannot be separated");

  std::vector<double> spacings;
  for (const auto& c : all)
    for (std::size_t i = 1; i < c.size(); ++i) spacings.push_back(c.projections[i] - c.projections[i - 1]);
  const double pad = spacings.empty() ? 0.5 : 0.5 * std::max(median(spacings), 1e-6);

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return all[x].size() > all[y].size(); });

  auto interval = [&](const Cluster& c) { return detail::Interval{c.projections.front() - pad, c.projections.back() + pad}; };
  auto mean_along = [&](const Cluster& c) {
    double s = 0.0;
    for (const auto& w : c.members) s += along(w.position, angle);
    return s / static_cast<double>(c.size());
  };

  struct Side {
    std::vector<detail::Interval> covered;
    std::vector<std::size_t> members;  // indices into all
    double along_sum = 0.0;
    std::size_t count = 0;
  } sides[2];
  auto join = [&](int s, std::size_t ci) {
    sides[s].covered.push_back(interval(all[ci]));
    sides[s].members.push_back(ci);
    for (const auto& w : all[ci].members) sides[s].along_sum += along(w.position, angle);
    sides[s].count += all[ci].size();
  };
  join(0, order[0]);
  for (std::size_t k = 1; k < order.size(); ++k) {
    const std::size_t ci = order[k];
    const auto iv = interval(all[ci]);
    const double o0 = detail::overlap(iv, sides[0].covered), o1 = detail::overlap(iv, sides[1].covered);
    int side;
    if (o0 < o1) {
      side = 0;
    } else if (o1 < o0) {
      side = 1;
    } else if (sides[1].count == 0) {
      side = 1;
    } else {
      const double m = mean_along(all[ci]);
      const double d0 = std::fabs(m - sides[0].along_sum / sides[0].count);
      const double d1 = std::fabs(m - sides[1].along_sum / sides[1].count);
      side = d0 < d1 ? 0 : (d1 < d0 ? 1 : (detail::covered_length(sides[0].covered) <= detail::covered_length(sides[1].covered) ? 0 : 1));
    }
    join(side, ci);
  }
  if (sides[1].count == 0) throw geometry_error("every waypoint fell on one side; the field sides cannot be separated");

  // Tagged members for seam refinement.
  struct Tagged {
    Waypoint w;
    double proj;
    std::size_t origin;
  };
  std::vector<Tagged> g[2];
  for (int s = 0; s < 2; ++s) {
    for (std::size_t ci : sides[s].members)
      for (std::size_t i = 0; i < all[ci].size(); ++i) g[s].push_back({all[ci].members[i], all[ci].projections[i], ci});
    std::stable_sort(g[s].begin(), g[s].end(), [](const Tagged& x, const Tagged& y) { return x.proj < y.proj; });
  }

  auto crossings = [&](const Waypoint& x, const Waypoint& y) {
    return segment_row_crossings(grid, clamp_to(grid, x.position), clamp_to(grid, y.position));
  };
  // Neighbours a waypoint would have in group s, by projection.
  auto neighbours_in = [&](int s, double proj, std::size_t skip) {
    std::vector<const Tagged*> out;
    const Tagged* below = nullptr;
    const Tagged* above = nullptr;
    for (std::size_t i = 0; i < g[s].size(); ++i) {
      if (i == skip) continue;
      if (g[s][i].proj <= proj) below = &g[s][i];
      if (g[s][i].proj > proj && !above) above = &g[s][i];
    }
    if (below) out.push_back(below);
    if (above) out.push_back(above);
    return out;
  };
  const std::size_t none = std::numeric_limits<std::size_t>::max();
  // Each move fixes at least one bad hop; the bound only guards against
  // pathological masks where two seams keep trading a waypoint.
  const std::size_t max_moves = g[0].size() + g[1].size();
  for (std::size_t move = 0; move < max_moves; ++move) {
    bool changed = false;
    for (int s = 0; s < 2 && !changed; ++s) {
      for (std::size_t i = 0; i < g[s].size() && !changed; ++i) {
        const bool seam = (i > 0 && g[s][i - 1].origin != g[s][i].origin) ||
                          (i + 1 < g[s].size() && g[s][i + 1].origin != g[s][i].origin);
        if (!seam || g[s].size() <= 1) continue;
        const auto here = neighbours_in(s, g[s][i].proj, i);
        const auto there = neighbours_in(1 - s, g[s][i].proj, none);
        const bool bad_here = std::any_of(here.begin(), here.end(), [&](const Tagged* t) { return crossings(g[s][i].w, t->w) != 1; });
        const bool good_there = !there.empty() &&
                                std::all_of(there.begin(), there.end(), [&](const Tagged* t) { return crossings(g[s][i].w, t->w) == 1; });
        if (bad_here && good_there) {
          Tagged moved = g[s][i];
          g[s].erase(g[s].begin() + static_cast<std::ptrdiff_t>(i));
          const auto pos = std::upper_bound(g[1 - s].begin(), g[1 - s].end(), moved.proj,
                                            [](double p, const Tagged& t) { return p < t.proj; });
          g[1 - s].insert(pos, moved);
          changed = true;
        }
      }
    }
    if (!changed) break;
  }

  Groups out;
  Cluster* dst[2] = {&out.a, &out.b};
  for (int s = 0; s < 2; ++s)
    for (const auto& t : g[s]) {
      dst[s]->members.push_back(t.w);
      dst[s]->projections.push_back(t.proj);
    }
  return out;
}

// ---- route ------------------------------------------------------------------------

struct RouteOrder {
  std::vector<Waypoint> sequence;
  std::vector<char> groups;  // 'A' or 'B' per waypoint
  Angle angle;

  // Indices i where sequence[i] and sequence[i + 1] lie on different sides:
  // the legs that travel along a corridor.
  std::vector<std::size_t> corridor_breaks() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i + 1 < groups.size(); ++i)
      if (groups[i] != groups[i + 1]) out.push_back(i);
    return out;
  }
};

// A-B-B-A sequencing starting from the lowest projection in A. A corridor hop
// (to the other side) must cross no row; when it would, the other side has no
// waypoint for this corridor and the route stays within its group, moving to
// the next waypoint on the same side. Other-side waypoints left behind by
// that walk are dropped.
inline RouteOrder final_order(const Cluster& a, const Cluster& b, const OccupancyGrid& grid) {
  if (a.empty() || b.empty()) throw ordering_error("final_order needs waypoints on both sides");
  const Cluster* side[2] = {&a, &b};
  const char tag[2] = {'A', 'B'};
  std::size_t next[2] = {0, 0};
  RouteOrder route;
  auto emit = [&](int s) {
    route.sequence.push_back(side[s]->members[next[s]]);
    route.groups.push_back(tag[s]);
    ++next[s];
  };
  auto crossings = [&](const Waypoint& x, const Waypoint& y) {
    return segment_row_crossings(grid, clamp_to(grid, x.position), clamp_to(grid, y.position));
  };

  int s = 0;
  emit(s);
  for (;;) {
    const Waypoint cur = route.sequence.back();
    const double cur_proj = side[s]->projections[next[s] - 1];
    const int o = 1 - s;
    // Skip other-side waypoints already behind the current position.
    bool hopped = false;
    while (next[o] < side[o]->size()) {
      const Waypoint& cand = side[o]->members[next[o]];
      if (crossings(cur, cand) == 0) {
        emit(o);
        s = o;
        hopped = true;
        break;
      }
      if (side[o]->projections[next[o]] < cur_proj) {
        ++next[o];
        continue;
      }
      break;
    }
    if (hopped) {
      if (next[s] >= side[s]->size()) break;
      emit(s);  // turn to the next corridor on this side
      continue;
    }
    if (next[s] >= side[s]->size()) break;
    emit(s);  // no crossing-free partner: remain within the same group
  }
  return route;
}

// ---- whole ordering stage ----------------------------------------------------------

struct OrderConfig {
  std::optional<double> eps;  // DBSCAN radius; 2.5 x median nearest-neighbour distance when unset
  std::size_t min_pts = 3;
  HoughParams hough;
  RefineConfig refine;
  std::optional<Angle> angle;  // skips estimation when set
};

struct OrderResult {
  RouteOrder route;
  Groups groups;
  AngleEstimate angle;
  DbscanResult clustering;
};

inline OrderResult order_waypoints(const std::vector<Waypoint>& points, const OccupancyGrid& grid, const OrderConfig& cfg = {}) {
  if (points.size() < 2) throw ordering_error("at least two waypoints are needed to build a route");
  OrderResult r;
  r.angle = cfg.angle ? AngleEstimate{*cfg.angle, false, 0} : estimate_angle_detailed(grid, cfg.hough);
  const Angle angle = r.angle.angle;

  std::vector<Point> pos;
  for (const auto& w : points) pos.push_back(w.position);
  r.clustering = dbscan(pos, cfg.eps.value_or(default_eps(pos)), cfg.min_pts);

  std::vector<Cluster> clusters;
  for (const auto& idx : r.clustering.clusters) {
    std::vector<Waypoint> members;
    for (std::size_t i : idx) members.push_back(points[i]);
    clusters.push_back(refine_cluster(make_cluster(members, angle), grid, cfg.refine));
  }
  std::vector<Waypoint> noise;
  for (std::size_t i : r.clustering.noise) noise.push_back(points[i]);

  r.groups = merge_into_groups(clusters, noise, angle, grid);
  r.groups.a = refine_cluster(r.groups.a, grid, cfg.refine);
  r.groups.b = refine_cluster(r.groups.b, grid, cfg.refine);
  r.route = final_order(r.groups.a, r.groups.b, grid);
  r.route.angle = angle;
  return r;
}

// ---- route files ---------------------------------------------------------------------

inline nlohmann::json route_to_json(const RouteOrder& r) {
  auto seq = nlohmann::json::array();
  auto groups = nlohmann::json::array();
  auto conf = nlohmann::json::array();
  for (std::size_t i = 0; i < r.sequence.size(); ++i) {
    seq.push_back({r.sequence[i].position.x, r.sequence[i].position.y});
    groups.push_back(std::string(1, r.groups[i]));
    conf.push_back(r.sequence[i].confidence);
  }
  return {{"sequence", seq}, {"groups", groups}, {"confidence", conf}, {"angle", r.angle.radians()}};
}

inline RouteOrder route_from_json(const nlohmann::json& j) {
  RouteOrder r;
  try {
    const auto& seq = j.at("sequence");
    const auto& groups = j.at("groups");
    if (seq.size() != groups.size()) throw format_error("route: sequence and groups differ in length");
    const bool has_conf = j.contains("confidence");
    if (has_conf && j["confidence"].size() != seq.size()) throw format_error("route: confidence list length mismatch");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i].size() != 2) throw format_error("route: each sequence entry must be [x, y]");
      const auto g = groups[i].get<std::string>();
      if (g != "A" && g != "B") throw format_error("route: group tags must be \"A\" or \"B\"");
      r.sequence.push_back({{seq[i][0].get<double>(), seq[i][1].get<double>()}, has_conf ? j["confidence"][i].get<double>() : 1.0});
      r.groups.push_back(g[0]);
    }
    r.angle = Angle(j.at("angle").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("route: ") + e.what());
  }
  return r;
}

inline void write_route(const std::filesystem::path& path, const RouteOrder& r) { write_json_file(path, route_to_json(r)); }
inline RouteOrder read_route(const std::filesystem::path& path) { return route_from_json(read_json_file(path)); }

}  // namespace deepway
