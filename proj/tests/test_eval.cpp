#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "deepway/datagen.hpp"
#include "deepway/eval.hpp"
#include "deepway/pipeline.hpp"

using namespace deepway;

namespace {

// Greedy matching spelled out: predictions by descending confidence (input
// order on ties), each taking the closest free truth within r_c, lower index
// on distance ties.
std::tuple<std::size_t, std::size_t, std::size_t> greedy_reference(const std::vector<Waypoint>& pred,
                                                                   const std::vector<Point>& truth, double r_c) {
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (pred[order[j]].confidence > pred[order[i]].confidence ||
          (pred[order[j]].confidence == pred[order[i]].confidence && order[j] < order[i]))
        std::swap(order[i], order[j]);
  std::vector<bool> taken(truth.size());
  std::size_t tp = 0, fp = 0;
  for (std::size_t i : order) {
    std::vector<std::pair<double, std::size_t>> options;
    for (std::size_t j = 0; j < truth.size(); ++j)
      if (!taken[j] && distance(pred[i].position, truth[j]) <= r_c) options.push_back({distance(pred[i].position, truth[j]), j});
    if (options.empty()) {
      ++fp;
      continue;
    }
    taken[std::min_element(options.begin(), options.end())->second] = true;
    ++tp;
  }
  return {tp, fp, truth.size() - tp};
}

FieldParams clean_params() {
  auto p = FieldParams::for_size(256);
  p.hole_probability = 0.0;
  return p;
}

}  // namespace

TEST(Match, ExactPredictions) {
  const std::vector<Point> truth{{1, 1}, {20, 5}, {7, 30}};
  std::vector<Waypoint> pred;
  for (Point p : truth) pred.push_back({p, 0.9});
  const auto m = match_waypoints(pred, truth, 2);
  EXPECT_EQ(m.tp, 3u);
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);
}

TEST(Match, OneTruthCountsOnce) {
  const auto m = match_waypoints({{{10, 10}, 0.9}, {{11, 10}, 0.8}}, {{10.5, 10}}, 4);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 0u);
  ASSERT_EQ(m.matches.size(), 1u);
  EXPECT_EQ(m.matches[0].prediction, 0u);
  EXPECT_THROW(match_waypoints({}, {}, 0), argument_error);
}

TEST(Match, MatchesGreedyReference) {
  Rng rng(51);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Waypoint> pred;
    std::vector<Point> truth;
    for (auto n = rng.uniform_int(0, 10); n > 0; --n)
      pred.push_back({{double(rng.uniform_int(0, 20)), double(rng.uniform_int(0, 20))}, double(rng.uniform_int(1, 3)) / 3});
    for (auto n = rng.uniform_int(0, 10); n > 0; --n) truth.push_back({double(rng.uniform_int(0, 20)), double(rng.uniform_int(0, 20))});
    const double r_c = rng.uniform(1, 8);
    const auto m = match_waypoints(pred, truth, r_c);
    const auto [tp, fp, fn] = greedy_reference(pred, truth, r_c);
    EXPECT_EQ(m.tp, tp);
    EXPECT_EQ(m.fp, fp);
    EXPECT_EQ(m.fn, fn);
  }
}

TEST(AveragePrecision, PerfectAndEmpty) {
  std::vector<ImageDetections> perfect(3), empty(3);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 5; ++k) {
      const Point p{20.0 * k, 10.0 * i};
      perfect[i].truth.push_back(p);
      perfect[i].predictions.push_back({p, 1.0});
      empty[i].truth.push_back(p);
    }
  }
  EXPECT_DOUBLE_EQ(average_precision(perfect, 2).ap, 1.0);
  const auto e = average_precision(empty, 8);
  EXPECT_EQ(e.ap, 0.0);
  for (const auto& p : e.curve) EXPECT_FALSE(p.defined);
  EXPECT_THROW(average_precision(std::vector<ImageDetections>(2), 8), undefined_metric_error);
}

TEST(AveragePrecision, GrowsWithRadius) {
  Rng rng(52);
  std::vector<ImageDetections> images(10);
  for (auto& im : images)
    for (int k = 0; k < 12; ++k) {
      const Point t{20.0 * k + 10, rng.uniform(10, 200)};
      im.truth.push_back(t);
      const double r = rng.uniform(0, 7), a = rng.uniform(0, 6.283);
      im.predictions.push_back({{t.x + r * std::cos(a), t.y + r * std::sin(a)}, rng.uniform(0.2, 1.0)});
      if (rng.bernoulli(0.2)) im.predictions.push_back({{rng.uniform(0, 240), rng.uniform(0, 240)}, rng.uniform(0, 1)});
    }
  const double ap2 = average_precision(images, 2).ap, ap4 = average_precision(images, 4).ap, ap8 = average_precision(images, 8).ap;
  EXPECT_LT(ap2, ap4);
  EXPECT_LT(ap4, ap8);
  const auto r = average_precision(images, 8);
  ASSERT_EQ(r.curve.size(), 11u);
  for (std::size_t i = 1; i < r.curve.size(); ++i) EXPECT_LE(r.curve[i].recall, r.curve[i - 1].recall);
}

TEST(Coverage, OracleRunOnCleanFields) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = generate_field(seed, clean_params());
    const auto c = evaluate_coverage(t.grid, truth_waypoints(t), t.rows.size() - 1, {});
    EXPECT_EQ(c.error, "");
    EXPECT_DOUBLE_EQ(c.score, 1.0) << "seed " << seed;
  }
}

TEST(Coverage, SkippingACorridorCostsOneShare) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = generate_field(seed, clean_params());
    const std::size_t total = t.rows.size() - 1;
    const auto full = plan_waypoints(t.grid, truth_waypoints(t), {});
    // Drop the first corridor: the route starts at the far end of the second.
    RouteOrder shorter = full.order.route;
    shorter.sequence.erase(shorter.sequence.begin(), shorter.sequence.begin() + 2);
    shorter.groups.erase(shorter.groups.begin(), shorter.groups.begin() + 2);
    const auto plan = plan_route(t.grid, shorter, PlanConfig{.snap_radius = 8.0});
    const auto c = coverage_score(t.grid, plan, shorter, total);
    EXPECT_EQ(c.covered, total - 1) << "seed " << seed;
    EXPECT_NEAR(c.score, double(total - 1) / total, 1e-12);
  }
}

TEST(Coverage, RepeatedCorridorIsNotCounted) {
  const auto t = generate_field(3, clean_params());
  const auto full = plan_waypoints(t.grid, truth_waypoints(t), {});
  RouteOrder r = full.order.route;
  // Walk the first corridor again before continuing.
  r.sequence.insert(r.sequence.begin() + 2, r.sequence[0]);
  r.groups.insert(r.groups.begin() + 2, r.groups[0]);
  r.sequence.insert(r.sequence.begin() + 3, r.sequence[1]);
  r.groups.insert(r.groups.begin() + 3, r.groups[1]);
  const auto plan = plan_route(t.grid, r);
  const auto c = coverage_score(t.grid, plan, r, t.rows.size() - 1);
  EXPECT_LE(c.covered, t.rows.size() - 1);
  EXPECT_LE(c.score, 1.0);
}

TEST(Coverage, Errors) {
  const auto t = generate_field(1, clean_params());
  const auto full = plan_waypoints(t.grid, truth_waypoints(t), {});
  PathPlan broken = full.plan;
  broken.legs.pop_back();
  EXPECT_THROW(coverage_score(t.grid, broken, full.order.route, 5), alignment_error);
  EXPECT_THROW(coverage_score(t.grid, full.plan, full.order.route, 0), argument_error);
}

TEST(Coverage, EstimatedCorridors) {
  OccupancyGrid g(100, 100);
  for (int r = 0; r < 5; ++r)
    for (int y = 15 + 17 * r; y < 18 + 17 * r; ++y)
      for (int x = 10; x < 90; ++x) g.set(x, y, true);
  EXPECT_EQ(estimate_corridors(g, Angle(0.0)), 4u);
}

TEST(Reports, JsonAndCsv) {
  std::vector<ImageDetections> im(1);
  im[0].truth = {{5, 5}};
  im[0].predictions = {{{5, 6}, 0.95}};
  const auto ap = average_precision(im, 2);
  const auto j = ap_to_json(ap);
  EXPECT_DOUBLE_EQ(j.at("ap").get<double>(), 1.0);
  EXPECT_EQ(j.at("curve").size(), 11u);
  const auto path = std::filesystem::temp_directory_path() / "deepway_test_pr.csv";
  write_pr_csv(path, {ap});
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("precision"), std::string::npos);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 11u);
}
