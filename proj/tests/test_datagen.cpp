#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "deepway/datagen.hpp"
#include "oracles.hpp"

using namespace deepway;
namespace fs = std::filesystem;

namespace {

FieldParams clean(int size = 256) {
  auto p = FieldParams::for_size(size);
  p.hole_probability = 0.0;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("deepway_test_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST(GtWaypoint, SymmetricCase) {
  const Point w = gt_waypoint({0, 0}, {0, 10}, {1, 0}, {1, 0});
  EXPECT_NEAR(w.x, 5.0, 1e-12);
  EXPECT_NEAR(w.y, 5.0, 1e-12);
}

TEST(GtWaypoint, Degenerate) {
  EXPECT_THROW(gt_waypoint({3, 3}, {3, 3}, {1, 0}, {1, 0}), geometry_error);
  EXPECT_THROW(gt_waypoint({0, 0}, {0, 10}, {1, 0}, {-1, 0}), geometry_error);
}

TEST(Field, Deterministic) {
  const auto p = FieldParams::for_size(256);
  const auto a = generate_field(42, p), b = generate_field(42, p);
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(truth_to_json(a), truth_to_json(b));
  EXPECT_NE(generate_field(43, p).grid, a.grid);
}

TEST(Field, HorizontalRowsWithoutJitter) {
  auto p = clean(256);
  p.angle_min = p.angle_max = 0.0;
  p.spacing_jitter = p.end_jitter = p.border_jitter = p.border_tilt_max = p.row_angle_jitter = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = generate_field(seed, p);
    const int radius_bound = p.row_radius_max * 2;
    std::vector<int> x_lo, x_hi, lines;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& r = t.rows[i];
      EXPECT_NEAR(r.start.y, r.end.y, 1e-9);
      // Every band line is a single run; the row spans the same columns on each line.
      const int yc = int(std::lround(r.centre.y));
      int lo = t.grid.width(), hi = -1, n = 0;
      for (int y = yc - radius_bound; y <= yc + radius_bound; ++y) {
        if (y < 0 || y >= t.grid.height()) continue;
        std::vector<std::uint8_t> line;
        for (int x = 0; x < t.grid.width(); ++x) line.push_back(t.grid.at(x, y));
        EXPECT_LE(count_risings(line), 1) << "seed " << seed << " row " << i << " y " << y;
        const auto first = std::find(line.begin(), line.end(), 1);
        if (first == line.end()) continue;
        ++n;
        lo = std::min(lo, int(first - line.begin()));
        hi = std::max(hi, int(line.rend() - std::find(line.rbegin(), line.rend(), 1)) - 1);
      }
      x_lo.push_back(lo);
      x_hi.push_back(hi);
      lines.push_back(n);
    }
    // Equal lengths up to one pixel of resampling. Thickness also depends on
    // where the centre line falls between canvas lines: one more line each way.
    auto spread = [](const std::vector<int>& v) { return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()); };
    EXPECT_LE(spread(x_lo), 1) << "seed " << seed;
    EXPECT_LE(spread(x_hi), 1) << "seed " << seed;
    EXPECT_LE(spread(lines), 2) << "seed " << seed;
  }
}

TEST(Field, WaypointsPerCorridor) {
  const auto p = FieldParams::for_size(256);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = generate_field(seed, p);
    ASSERT_GE(t.rows.size(), 2u);
    EXPECT_EQ(t.waypoints_a.size(), t.rows.size() - 1);
    EXPECT_EQ(t.waypoints_b.size(), t.rows.size() - 1);
    for (const auto* side : {&t.waypoints_a, &t.waypoints_b})
      for (Point w : *side) {
        EXPECT_TRUE(t.grid.contains(w));
        EXPECT_FALSE(t.grid.occupied(nearest_pixel(w)));
      }
  }
}

TEST(Field, WaypointsSitInTheirCorridor) {
  const auto p = clean(256);
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const auto t = generate_field(seed, p);
    const auto label = oracle::components(t.grid);
    for (std::size_t i = 0; i + 1 < t.rows.size(); ++i) {
      const Point a = t.waypoints_a[i], b = t.waypoints_b[i];
      // The way from a waypoint to the ends of its two rows meets no other row.
      for (std::size_t r : {i, i + 1}) {
        const Point ea = clamp_to(t.grid, t.rows[r].end), eb = clamp_to(t.grid, t.rows[r].start);
        EXPECT_TRUE(oracle::touches_only(t.grid, label, a, ea, oracle::component_at(t.grid, label, ea))) << "seed " << seed << " A" << i;
        EXPECT_TRUE(oracle::touches_only(t.grid, label, b, eb, oracle::component_at(t.grid, label, eb))) << "seed " << seed << " B" << i;
      }
      EXPECT_EQ(segment_row_crossings(t.grid, a, b), 0) << "seed " << seed << " corridor " << i;
      if (i + 1 < t.waypoints_a.size()) {
        // Neighbours on one side are separated by the shared row alone; a run
        // count would also see a thin row's staircase grazed twice.
        const int shared = oracle::component_at(t.grid, label, t.rows[i + 1].centre);
        EXPECT_GE(segment_row_crossings(t.grid, a, t.waypoints_a[i + 1]), 1) << "seed " << seed;
        EXPECT_TRUE(oracle::touches_only(t.grid, label, a, t.waypoints_a[i + 1], shared)) << "seed " << seed;
        EXPECT_GE(segment_row_crossings(t.grid, b, t.waypoints_b[i + 1]), 1) << "seed " << seed;
        EXPECT_TRUE(oracle::touches_only(t.grid, label, b, t.waypoints_b[i + 1], shared)) << "seed " << seed;
      }
    }
  }
}

TEST(Field, RowsAreSeparateComponents) {
  const auto p = clean(256);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = generate_field(seed, p);
    const auto label = oracle::components(t.grid);
    std::set<int> seen;
    for (const auto& r : t.rows) {
      const int id = oracle::component_at(t.grid, label, r.start);
      EXPECT_EQ(oracle::component_at(t.grid, label, r.end), id) << "seed " << seed;
      EXPECT_TRUE(seen.insert(id).second) << "seed " << seed << ": two rows share a component";
    }
    EXPECT_EQ(*std::max_element(label.begin(), label.end()), int(t.rows.size())) << "seed " << seed;
  }
}

TEST(Field, InfeasibleParams) {
  auto p = FieldParams::for_size(256);
  p.inter_row_distance = 40.0;
  p.n_rows_max = 20;
  EXPECT_THROW(generate_field(1, p), infeasible_params_error);
  auto q = FieldParams::for_size(256);
  q.hole_probability = 1.0;
  EXPECT_THROW(generate_field(1, q), argument_error);
}

TEST(Field, TruthJsonRoundTrip) {
  const auto t = generate_field(5, FieldParams::for_size(128));
  const auto back = truth_from_json(truth_to_json(t));
  EXPECT_EQ(back.waypoints_a.size(), t.waypoints_a.size());
  EXPECT_EQ(truth_to_json(back), truth_to_json(t));
}

TEST(Dataset, EmptyManifest) {
  const auto dir = scratch("empty");
  const auto m = generate_dataset(3, 0, FieldParams::for_size(128), dir);
  EXPECT_TRUE(m.items.empty());
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != "manifest.json") ++files;
  EXPECT_EQ(files, 0u);
  EXPECT_TRUE(read_manifest(dir / "manifest.json").items.empty());
}

TEST(Dataset, RegenerateItemByteIdentical) {
  const auto dir = scratch("regen");
  const auto params = FieldParams::for_size(128);
  const auto m = generate_dataset(77, 18, params, dir);
  const auto loaded = read_manifest(dir / "manifest.json");
  ASSERT_EQ(loaded.items.size(), 18u);
  const auto again = scratch("regen_again");
  fs::create_directories(again);
  write_field_files(again, 17, generate_field(item_seed(loaded.master_seed, 17), loaded.params));
  EXPECT_EQ(slurp(m.mask_path(17)), slurp(again / "mask_00017.png"));
  EXPECT_EQ(slurp(m.truth_path(17)), slurp(again / "truth_00017.json"));
}

TEST(Dataset, MaskRoundTrip) {
  const auto dir = scratch("mask");
  const auto m = generate_dataset(8, 2, FieldParams::for_size(128), dir);
  const auto t = generate_field(item_seed(8, 1), FieldParams::for_size(128));
  EXPECT_EQ(read_mask_png(m.mask_path(1)), t.grid);
}
