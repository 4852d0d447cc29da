#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "deepway/datagen.hpp"
#include "deepway/order.hpp"
#include "oracles.hpp"

using namespace deepway;

namespace {

constexpr double pi = std::numbers::pi;

// Horizontal rows of thickness 3 centred on y = 20, 40, ...; each spans
// [x_lo[i], x_hi[i]]. Side A is the +x end.
struct HandField {
  OccupancyGrid grid;
  std::vector<Point> a, b;
};

HandField hand_field(int rows, std::vector<int> x_lo = {}, std::vector<int> x_hi = {}) {
  if (x_lo.empty()) x_lo.assign(rows, 20);
  if (x_hi.empty()) x_hi.assign(rows, 99);
  HandField f{OccupancyGrid(20 * rows + 20, 140), {}, {}};
  for (int i = 0; i < rows; ++i)
    for (int y = 20 * (i + 1) - 1; y <= 20 * (i + 1) + 1; ++y)
      for (int x = x_lo[i]; x <= x_hi[i]; ++x) f.grid.set(x, y, true);
  for (int i = 0; i + 1 < rows; ++i) {
    const double y0 = 20.0 * (i + 1), y1 = 20.0 * (i + 2);
    f.a.push_back(gt_waypoint({double(x_hi[i]), y0}, {double(x_hi[i + 1]), y1}, {-1, 0}, {-1, 0}));
    f.b.push_back(gt_waypoint({double(x_lo[i]), y0}, {double(x_lo[i + 1]), y1}, {1, 0}, {1, 0}));
  }
  return f;
}

std::vector<Waypoint> as_waypoints(const std::vector<Point>& pts, double confidence = 1.0) {
  std::vector<Waypoint> out;
  for (Point p : pts) out.push_back({p, confidence});
  return out;
}

bool same_points(const Cluster& c, const std::vector<Point>& pts) {
  if (c.size() != pts.size()) return false;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (distance(c.members[i].position, pts[i]) > 1e-9) return false;
  return true;
}

FieldParams clean_params(double angle) {
  auto p = FieldParams::for_size(256);
  p.hole_probability = 0.0;
  p.angle_min = p.angle_max = angle;
  return p;
}

}  // namespace

TEST(Dbscan, SeparatedGroups) {
  std::vector<Point> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({5.0 * i, 0});
  for (int i = 0; i < 5; ++i) pts.push_back({500 + 5.0 * i, 0});
  const auto r = dbscan(pts, 20, 3);
  EXPECT_EQ(r.clusters.size(), 2u);
  EXPECT_TRUE(r.noise.empty());
}

TEST(Dbscan, IsolatedPointIsNoise) {
  const auto r = dbscan({{0, 0}}, 5, 3);
  EXPECT_TRUE(r.clusters.empty());
  ASSERT_EQ(r.noise.size(), 1u);
  EXPECT_EQ(r.labels[0], -1);
  EXPECT_THROW(dbscan({{0, 0}}, 0, 3), argument_error);
}

TEST(Dbscan, MatchesReference) {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = rng.uniform_int(0, 40);
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i) pts.push_back({double(rng.uniform_int(0, 60)), double(rng.uniform_int(0, 60))});
    const double eps = rng.uniform(2, 15);
    const auto min_pts = std::size_t(rng.uniform_int(1, 5));
    const auto r = dbscan(pts, eps, min_pts);
    EXPECT_TRUE(oracle::same_labelling(r.labels, oracle::dbscan(pts, eps, min_pts))) << "trial " << trial;
  }
}

TEST(AngleEstimate, HorizontalField) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = generate_field(seed, clean_params(0.0));
    EXPECT_LT(Angle::separation(estimate_angle(t.grid), Angle(0.0)), pi / 180) << "seed " << seed;
  }
}

TEST(AngleEstimate, DiagonalField) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = generate_field(seed, clean_params(pi / 4));
    EXPECT_LT(Angle::separation(estimate_angle(t.grid), Angle(pi / 4)), pi / 180) << "seed " << seed;
  }
}

TEST(AngleEstimate, DiscFallsBack) {
  OccupancyGrid g(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (std::hypot(x - 32, y - 32) < 6) g.set(x, y, true);
  const auto e = estimate_angle_detailed(g);
  EXPECT_TRUE(e.used_fallback);
  EXPECT_TRUE(std::isfinite(e.angle.radians()));
  EXPECT_THROW(estimate_angle(OccupancyGrid(8, 8)), no_content_error);
}

TEST(ProjectAndSort, HorizontalAngle) {
  const auto c = make_cluster(as_waypoints({{5, 10}, {5, 2}, {5, 7}}), Angle(0.0));
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.members[0].position.y, 2);
  EXPECT_EQ(c.members[1].position.y, 7);
  EXPECT_EQ(c.members[2].position.y, 10);
  EXPECT_TRUE(std::is_sorted(c.projections.begin(), c.projections.end()));
}

TEST(ProjectAndSort, RotationInvariant) {
  Rng rng(32);
  std::vector<Point> pts;
  for (int i = 0; i < 12; ++i) pts.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50)});
  const double a = 0.4, rot = 1.1;
  const auto base = make_cluster(as_waypoints(pts), Angle(a));
  std::vector<Point> turned;
  for (Point p : pts) turned.push_back({p.x * std::cos(rot) - p.y * std::sin(rot), p.x * std::sin(rot) + p.y * std::cos(rot)});
  const auto moved = make_cluster(as_waypoints(turned), Angle(a + rot));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Point p = base.members[i].position;
    const Point q{p.x * std::cos(rot) - p.y * std::sin(rot), p.x * std::sin(rot) + p.y * std::cos(rot)};
    EXPECT_LT(distance(q, moved.members[i].position), 1e-9);
  }
}

TEST(ProjectAndSort, TruthSideInCorridorOrder) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = generate_field(seed, FieldParams::for_size(256));
    Rng rng(seed);
    auto shuffled = t.waypoints_a;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[std::size_t(rng.uniform_int(0, i - 1))]);
    const auto c = make_cluster(as_waypoints(shuffled), t.angle);
    auto expected = t.waypoints_a;
    if (project(expected.front(), t.angle) > project(expected.back(), t.angle)) std::reverse(expected.begin(), expected.end());
    EXPECT_TRUE(same_points(c, expected)) << "seed " << seed;
  }
}

TEST(Refine, OneRowBetweenIsUnchanged) {
  const auto f = hand_field(5);
  const auto c = make_cluster(as_waypoints(f.a), Angle(0.0));
  const auto r = refine_cluster(c, f.grid);
  EXPECT_TRUE(same_points(r, f.a));
}

TEST(Refine, MissingWaypointIsReinserted) {
  const auto f = hand_field(7);
  auto kept = f.a;
  kept.erase(kept.begin() + 2);
  const auto r = refine_cluster(make_cluster(as_waypoints(kept), Angle(0.0)), f.grid);
  ASSERT_EQ(r.size(), f.a.size());
  EXPECT_LT(distance(r.members[2].position, f.a[2]), 8.0);
  EXPECT_EQ(r.members[2].confidence, RefineConfig{}.inserted_confidence);
  EXPECT_FALSE(f.grid.occupied(nearest_pixel(r.members[2].position)));
}

TEST(Refine, DuplicateKeepsHigherConfidence) {
  const auto f = hand_field(5);
  auto w = as_waypoints(f.a);
  w.insert(w.begin() + 2, Waypoint{f.a[1] + Point{3, 2}, 0.99});
  w[1].confidence = 0.5;
  const auto r = refine_cluster(make_cluster(w, Angle(0.0)), f.grid);
  ASSERT_EQ(r.size(), f.a.size());
  EXPECT_EQ(r.members[1].confidence, 0.99);
}

TEST(Refine, NeedsSortedProjections) {
  Cluster c;
  c.members = as_waypoints({{0, 0}, {0, 5}});
  EXPECT_THROW(refine_cluster(c, OccupancyGrid(8, 8)), argument_error);
}

namespace {

std::vector<Cluster> clusters_of(const std::vector<Waypoint>& w, Angle angle, double eps, std::size_t min_pts,
                                 std::vector<Waypoint>* noise) {
  std::vector<Point> pos;
  for (const auto& x : w) pos.push_back(x.position);
  const auto r = dbscan(pos, eps, min_pts);
  std::vector<Cluster> out;
  for (const auto& idx : r.clusters) {
    std::vector<Waypoint> m;
    for (auto i : idx) m.push_back(w[i]);
    out.push_back(make_cluster(m, angle));
  }
  for (auto i : r.noise) noise->push_back(w[i]);
  return out;
}

bool holds_exactly(const Cluster& c, const std::vector<Point>& pts) {
  if (c.size() != pts.size()) return false;
  for (Point p : pts)
    if (std::none_of(c.members.begin(), c.members.end(), [&](const Waypoint& w) { return distance(w.position, p) < 1e-9; }))
      return false;
  return true;
}

}  // namespace

TEST(Merge, TruthSidesOfCleanFields) {
  auto params = FieldParams::for_size(256);
  params.hole_probability = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = generate_field(seed, params);
    auto all = as_waypoints(t.waypoints_a);
    for (Point p : t.waypoints_b) all.push_back({p, 1.0});
    std::vector<Point> pos;
    for (const auto& w : all) pos.push_back(w.position);
    std::vector<Waypoint> noise;
    const auto clusters = clusters_of(all, t.angle, default_eps(pos), 3, &noise);
    const auto g = merge_into_groups(clusters, noise, t.angle, t.grid);
    const bool direct = holds_exactly(g.a, t.waypoints_a) && holds_exactly(g.b, t.waypoints_b);
    const bool swapped = holds_exactly(g.a, t.waypoints_b) && holds_exactly(g.b, t.waypoints_a);
    EXPECT_TRUE(direct || swapped) << "seed " << seed;
  }
}

TEST(Merge, EqualIntervalsSplit) {
  const auto f = hand_field(5);
  const Angle a(0.0);
  std::vector<Cluster> c{make_cluster(as_waypoints(f.a), a), make_cluster(as_waypoints(f.b), a)};
  const auto g = merge_into_groups(c, {}, a, f.grid);
  EXPECT_TRUE((same_points(g.a, f.a) && same_points(g.b, f.b)) || (same_points(g.a, f.b) && same_points(g.b, f.a)));
}

TEST(Merge, ShortRowSplitSideStaysTogether) {
  std::vector<int> hi(9, 99);
  hi[4] = 60;
  const auto f = hand_field(9, {}, hi);
  const Angle a(0.0);
  auto all = as_waypoints(f.a);
  for (Point p : f.b) all.push_back({p, 1.0});
  std::vector<Waypoint> noise;
  const auto clusters = clusters_of(all, a, 25.0, 2, &noise);
  std::size_t a_parts = 0;
  for (const auto& w : noise) a_parts += w.position.x > 40;
  for (const auto& c : clusters) a_parts += c.members.front().position.x > 40;
  ASSERT_GE(a_parts, 2u) << "side A should split";
  const auto g = merge_into_groups(clusters, noise, a, f.grid);
  EXPECT_TRUE(holds_exactly(g.a, f.a) || holds_exactly(g.b, f.a));
  EXPECT_TRUE(holds_exactly(g.a, f.b) || holds_exactly(g.b, f.b));
}

TEST(Merge, SingleClusterCannotSplit) {
  const auto f = hand_field(4);
  auto w = as_waypoints(f.a);
  EXPECT_THROW(merge_into_groups({make_cluster(w, Angle(0.0))}, {}, Angle(0.0), f.grid), geometry_error);
}

TEST(FinalOrder, SmallestPattern) {
  const auto f = hand_field(3);
  const Angle a(0.0);
  const auto r = final_order(make_cluster(as_waypoints(f.a), a), make_cluster(as_waypoints(f.b), a), f.grid);
  ASSERT_EQ(r.sequence.size(), 4u);
  EXPECT_EQ(r.sequence[0].position, f.a[0]);
  EXPECT_EQ(r.sequence[1].position, f.b[0]);
  EXPECT_EQ(r.sequence[2].position, f.b[1]);
  EXPECT_EQ(r.sequence[3].position, f.a[1]);
  EXPECT_EQ(std::string(r.groups.begin(), r.groups.end()), "ABBA");
  EXPECT_EQ(r.corridor_breaks(), (std::vector<std::size_t>{0, 2}));
  EXPECT_THROW(final_order(Cluster{}, make_cluster(as_waypoints(f.b), a), f.grid), ordering_error);
}

TEST(FinalOrder, CleanFieldsAlternate) {
  auto params = FieldParams::for_size(256);
  params.hole_probability = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = generate_field(seed, params);
    auto all = as_waypoints(t.waypoints_a);
    for (Point p : t.waypoints_b) all.push_back({p, 1.0});
    const auto r = order_waypoints(all, t.grid).route;
    ASSERT_EQ(r.sequence.size(), all.size()) << "seed " << seed;
    EXPECT_EQ(r.corridor_breaks().size(), t.rows.size() - 1) << "seed " << seed;
    const auto label = oracle::components(t.grid);
    for (std::size_t i = 0; i + 1 < r.sequence.size(); ++i) {
      const auto rows = oracle::rows_touched(t.grid, label, r.sequence[i].position, r.sequence[i + 1].position);
      EXPECT_EQ(rows, r.groups[i] == r.groups[i + 1] ? 1u : 0u) << "seed " << seed << " hop " << i;
    }
  }
}

TEST(FinalOrder, MissingLastWaypointStaysOnSide) {
  const auto f = hand_field(6);
  const Angle a(0.0);
  auto b = f.b;
  b.pop_back();
  const auto r = final_order(make_cluster(as_waypoints(f.a), a), make_cluster(as_waypoints(b), a), f.grid);
  for (std::size_t i = 0; i + 1 < r.sequence.size(); ++i) {
    if (r.groups[i] != r.groups[i + 1]) {
      EXPECT_EQ(segment_row_crossings(f.grid, r.sequence[i].position, r.sequence[i + 1].position), 0);
    }
  }
  EXPECT_EQ(r.sequence.back().position, f.a.back());
  EXPECT_EQ(r.groups.back(), 'A');
  EXPECT_EQ(std::count(r.groups.begin(), r.groups.end(), 'A'), std::ptrdiff_t(f.a.size()));
}

TEST(RouteFile, RoundTrip) {
  const auto f = hand_field(4);
  OrderConfig cfg;
  cfg.angle = Angle(0.0);
  const auto r = order_waypoints([&] {
    auto w = as_waypoints(f.a);
    for (Point p : f.b) w.push_back({p, 0.5});
    return w;
  }(), f.grid, cfg).route;
  const auto path = std::filesystem::temp_directory_path() / "deepway_test_route.json";
  write_route(path, r);
  const auto back = read_route(path);
  EXPECT_EQ(back.sequence, r.sequence);
  EXPECT_EQ(back.groups, r.groups);
  EXPECT_NEAR(back.angle.radians(), r.angle.radians(), 1e-12);
}
