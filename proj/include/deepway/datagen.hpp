#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "deepway/core.hpp"
#include "deepway/image_io.hpp"
#include "deepway/random.hpp"
#include "json.hpp"

namespace deepway {

struct FieldParams {
  int image_size = 800;
  int n_rows_min = 20;
  int n_rows_max = 50;
  double angle_min = -std::numbers::pi / 2;
  double angle_max = std::numbers::pi / 2;
  // Mean spacing between row centres in pixels; 0 selects image_size / (n_rows_max + 4).
  double inter_row_distance = 0.0;
  // Relative spread of each gap between adjacent row centres (0.2 -> gaps in [0.8, 1.2] x spacing).
  double spacing_jitter = 0.2;
  // Along-row displacement of each row end, as a fraction of the spacing.
  double end_jitter = 0.3;
  // Displacement of the field border vertices, as a fraction of the spacing.
  double border_jitter = 0.3;
  // Largest tilt of the end borders with respect to the row normal, radians.
  double border_tilt_max = 0.5;
  // Per-row orientation noise, radians.
  double row_angle_jitter = 0.01;
  int row_radius_min = 1;
  int row_radius_max = 2;
  // Per-pixel knockout probability; nonzero also enables 0-3 rectangular blanks.
  double hole_probability = 0.005;
  double rescale_min = 0.75;
  double rescale_max = 1.25;

  double spacing() const {
    return inter_row_distance > 0 ? inter_row_distance : image_size / static_cast<double>(n_rows_max + 4);
  }

  // Defaults for a square image of the given side. The row-count range keeps
  // the 20-50 rows of an 800 px image at the same density for other sizes.
  static FieldParams for_size(int size) {
    FieldParams p;
    p.image_size = size;
    if (size != 800) {
      p.n_rows_min = std::max(2, static_cast<int>(std::lround(20.0 * size / 800.0)));
      p.n_rows_max = std::max(p.n_rows_min, static_cast<int>(std::lround(50.0 * size / 800.0)));
    }
    return p;
  }

  void validate() const {
    if (image_size < 16) throw argument_error("image_size must be at least 16");
    if (n_rows_min < 2) throw argument_error("n_rows_min must be >= 2");
    if (n_rows_max < n_rows_min) throw argument_error("n_rows_max must be >= n_rows_min");
    if (!(hole_probability >= 0.0 && hole_probability < 1.0))
      throw argument_error("hole_probability must lie in [0, 1)");
    if (!(rescale_min > 0.0 && rescale_max >= rescale_min)) throw argument_error("invalid rescale range");
    if (row_radius_min < 0 || row_radius_max < row_radius_min) throw argument_error("invalid row radius range");
    if (angle_max < angle_min) throw argument_error("invalid angle range");
    if (spacing_jitter < 0 || end_jitter < 0 || border_jitter < 0 || border_tilt_max < 0 || row_angle_jitter < 0)
      throw argument_error("jitter magnitudes must be non-negative");
    if (spacing() * n_rows_max > std::sqrt(2.0) * image_size)
      throw infeasible_params_error("rows do not fit: inter_row_distance * n_rows_max exceeds the image diagonal");
  }
};

struct Row {
  Point start;  // side B extremity
  Point end;    // side A extremity
  Point centre;
};

struct FieldTruth {
  OccupancyGrid grid;
  std::vector<Row> rows;
  std::vector<Point> waypoints_a;  // one per corridor, near the row ends
  std::vector<Point> waypoints_b;  // one per corridor, near the row starts
  Angle angle;
  std::uint64_t seed = 0;
};

// Waypoint between two adjacent row extremities: the point on the circle
// centred on their midpoint, radius half their distance, in the mean of the
// two inward headings.
inline Point gt_waypoint(Point end_i, Point end_j, Point inward_i, Point inward_j) {
  const double r = distance(end_i, end_j) / 2.0;
  if (!(r > 0.0)) throw geometry_error("coincident row extremities");
  const double ni = norm(inward_i), nj = norm(inward_j);
  if (!(ni > 0.0) || !(nj > 0.0)) throw geometry_error("zero-length row heading");
  Point mean = inward_i * (1.0 / ni) + inward_j * (1.0 / nj);
  const double nm = norm(mean);
  if (nm < 1e-12) throw geometry_error("opposite row headings have no mean direction");
  mean = mean * (1.0 / nm);
  return (end_i + end_j) * 0.5 + mean * r;
}

namespace detail {

// Clips the line p + t*d to the box [lo, hi]^2; false when it misses.
inline bool clip_line(Point p, Point d, double lo, double hi, double& t0, double& t1) {
  t0 = -1e18;
  t1 = 1e18;
  const double pc[2] = {p.x, p.y};
  const double dc[2] = {d.x, d.y};
  for (int k = 0; k < 2; ++k) {
    if (std::fabs(dc[k]) < 1e-12) {
      if (pc[k] < lo || pc[k] > hi) return false;
      continue;
    }
    double a = (lo - pc[k]) / dc[k];
    double b = (hi - pc[k]) / dc[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  return t0 <= t1;
}

// Marks every pixel whose centre is within radius of segment a-b.
inline void stamp_capsule(OccupancyGrid& g, Point a, Point b, double radius, bool value) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius - 1)));
  const int x1 = std::min(g.width() - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius - 1)));
  const int y1 = std::min(g.height() - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius + 1)));
  const Point ab = b - a;
  const double len2 = dot(ab, ab);
  const double r2 = radius * radius + 1e-9;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const Point q = a + ab * t;
      const Point diff = p - q;
      if (dot(diff, diff) <= r2) g.set(x, y, value);
    }
}

struct RowDraft {
  double offset;
  Point centre;
  Point dir;
  double t_lo, t_hi;
  double t_b = 0, t_a = 0;
};

inline std::optional<FieldTruth> try_generate(Rng& rng, const FieldParams& prm) {
  const int size = prm.image_size;
  const int n_rows = static_cast<int>(rng.uniform_int(prm.n_rows_min, prm.n_rows_max));
  const Angle alpha(rng.uniform(prm.angle_min, prm.angle_max));
  const double scale = rng.uniform(prm.rescale_min, prm.rescale_max);
  const int radius = static_cast<int>(rng.uniform_int(prm.row_radius_min, prm.row_radius_max));

  // Geometry is drawn on a canvas whose nearest-neighbour resize to the
  // image applies the rescale factor.
  const int canvas = std::max(16, static_cast<int>(std::lround(size / scale)));
  const double s = prm.spacing();
  const double margin = radius + 3.0;
  const double lo = margin, hi = canvas - 1.0 - margin;
  const double min_length = 6.0 * s;
  const Point cc{(canvas - 1) / 2.0, (canvas - 1) / 2.0};
  const Point n = alpha.normal();

  std::vector<RowDraft> drafts;
  for (int i = 0; i < n_rows; ++i) {
    RowDraft r;
    r.offset = (i - (n_rows - 1) / 2.0) * s + rng.uniform(-0.5, 0.5) * prm.spacing_jitter * s;
    r.centre = cc + n * r.offset;
    r.dir = Angle(alpha.radians() + rng.uniform(-1.0, 1.0) * prm.row_angle_jitter).direction();
    if (dot(r.dir, alpha.direction()) < 0) r.dir = r.dir * -1.0;
    if (!clip_line(r.centre, r.dir, lo, hi, r.t_lo, r.t_hi)) r.t_lo = r.t_hi = 0;
    drafts.push_back(r);
  }

  // Keep the longest contiguous block of rows that fit with a usable length.
  int best_first = 0, best_len = 0;
  for (int i = 0; i < n_rows;) {
    if (drafts[i].t_hi - drafts[i].t_lo < min_length) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n_rows && drafts[j].t_hi - drafts[j].t_lo >= min_length) ++j;
    if (j - i > best_len) {
      best_len = j - i;
      best_first = i;
    }
    i = j;
  }
  if (best_len < 2) return std::nullopt;
  drafts = std::vector<RowDraft>(drafts.begin() + best_first, drafts.begin() + best_first + best_len);

  std::vector<double> his, los;
  double max_abs_offset = 0;
  for (const auto& r : drafts) {
    his.push_back(r.t_hi);
    los.push_back(-r.t_lo);
    max_abs_offset = std::max(max_abs_offset, std::fabs(r.offset));
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };

  // End borders: each is the line through two jittered vertices on the
  // outermost rows, tilted by a random angle.
  auto border = [&](double reach) {
    const double base = rng.uniform(0.5, 0.95) * reach;
    double tilt = rng.uniform(-prm.border_tilt_max, prm.border_tilt_max);
    if (max_abs_offset > 0) {
      const double cap = std::atan(0.25 * base / max_abs_offset);
      tilt = std::clamp(tilt, -cap, cap);
    }
    const double slope = std::tan(tilt);
    const auto& f = drafts.front();
    const auto& l = drafts.back();
    const double vf = base + f.offset * slope + rng.uniform(-1.0, 1.0) * prm.border_jitter * s;
    const double vl = base + l.offset * slope + rng.uniform(-1.0, 1.0) * prm.border_jitter * s;
    std::vector<double> ts;
    for (const auto& r : drafts) {
      const double u = l.offset == f.offset ? 0.0 : (r.offset - f.offset) / (l.offset - f.offset);
      ts.push_back(vf + u * (vl - vf) + rng.uniform(-1.0, 1.0) * prm.end_jitter * s);
    }
    return ts;
  };
  const auto ends_a = border(median(his));
  auto ends_b = border(median(los));
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    auto& r = drafts[i];
    r.t_a = std::clamp(ends_a[i], r.t_lo, r.t_hi);
    r.t_b = std::clamp(-ends_b[i], r.t_lo, r.t_hi);
    if (r.t_a - r.t_b < min_length) {
      r.t_a = r.t_hi;
      r.t_b = r.t_lo;
    }
  }

  OccupancyGrid canvas_grid(canvas, canvas);
  for (const auto& r : drafts)
    stamp_capsule(canvas_grid, r.centre + r.dir * r.t_b, r.centre + r.dir * r.t_a, radius, true);

  if (prm.hole_probability > 0) {
    for (int y = 0; y < canvas; ++y)
      for (int x = 0; x < canvas; ++x)
        if (canvas_grid.occupied(x, y) && rng.bernoulli(prm.hole_probability)) canvas_grid.set(x, y, false);

    const int blanks = static_cast<int>(rng.uniform_int(0, 3));
    for (int b = 0; b < blanks; ++b) {
      const auto& r = drafts[rng.uniform_int(0, static_cast<std::int64_t>(drafts.size()) - 1)];
      const Point c = r.centre + r.dir * rng.uniform(r.t_b, r.t_a);
      const int w = static_cast<int>(rng.uniform_int(3, 10));
      const int h = static_cast<int>(rng.uniform_int(3, 10));
      const int x0 = static_cast<int>(std::lround(c.x)) - w / 2;
      const int y0 = static_cast<int>(std::lround(c.y)) - h / 2;
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
          if (canvas_grid.in_bounds(x, y)) canvas_grid.set(x, y, false);
    }
  }

  FieldTruth truth;
  truth.angle = alpha;
  truth.grid = OccupancyGrid(size, size);
  for (int y = 0; y < size; ++y) {
    const int cy = std::min(canvas - 1, static_cast<int>((y + 0.5) * canvas / size));
    for (int x = 0; x < size; ++x) {
      const int cx = std::min(canvas - 1, static_cast<int>((x + 0.5) * canvas / size));
      if (canvas_grid.occupied(cx, cy)) truth.grid.set(x, y, true);
    }
  }

  const double k = static_cast<double>(size) / canvas;
  auto to_image = [k](Point p) { return Point{(p.x + 0.5) * k - 0.5, (p.y + 0.5) * k - 0.5}; };
  for (const auto& r : drafts)
    truth.rows.push_back({to_image(r.centre + r.dir * r.t_b), to_image(r.centre + r.dir * r.t_a), to_image(r.centre)});

  for (std::size_t i = 0; i + 1 < drafts.size(); ++i) {
    const auto& r0 = drafts[i];
    const auto& r1 = drafts[i + 1];
    truth.waypoints_a.push_back(gt_waypoint(truth.rows[i].end, truth.rows[i + 1].end, r0.dir * -1.0, r1.dir * -1.0));
    truth.waypoints_b.push_back(gt_waypoint(truth.rows[i].start, truth.rows[i + 1].start, r0.dir, r1.dir));
  }

  auto valid = [&](Point p) {
    if (!(p.x > 0.0 && p.y > 0.0 && p.x < size - 1.0 && p.y < size - 1.0)) return false;
    return !truth.grid.occupied(nearest_pixel(p));
  };
  for (Point p : truth.waypoints_a)
    if (!valid(p)) return std::nullopt;
  for (Point p : truth.waypoints_b)
    if (!valid(p)) return std::nullopt;
  return truth;
}

}  // namespace detail

// Deterministic synthetic row-crop field. A draw whose ground truth violates
// the waypoint invariants is redrawn from a seed derived from (seed, attempt).
inline FieldTruth generate_field(std::uint64_t seed, const FieldParams& params) {
  params.validate();
  constexpr int max_attempts = 64;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Rng rng(attempt == 0 ? seed : mix_seed(seed, 0x1000 + attempt));
    if (auto truth = detail::try_generate(rng, params)) {
      truth->seed = seed;
      return std::move(*truth);
    }
  }
  throw infeasible_params_error("could not draw a valid field for seed " + std::to_string(seed));
}

// ---- serialization -------------------------------------------------------

inline nlohmann::json to_json(const FieldParams& p) {
  return {{"image_size", p.image_size},
          {"n_rows_min", p.n_rows_min},
          {"n_rows_max", p.n_rows_max},
          {"angle_min", p.angle_min},
          {"angle_max", p.angle_max},
          {"inter_row_distance", p.inter_row_distance},
          {"spacing_jitter", p.spacing_jitter},
          {"end_jitter", p.end_jitter},
          {"border_jitter", p.border_jitter},
          {"border_tilt_max", p.border_tilt_max},
          {"row_angle_jitter", p.row_angle_jitter},
          {"row_radius_min", p.row_radius_min},
          {"row_radius_max", p.row_radius_max},
          {"hole_probability", p.hole_probability},
          {"rescale_min", p.rescale_min},
          {"rescale_max", p.rescale_max}};
}

inline FieldParams field_params_from_json(const nlohmann::json& j) {
  FieldParams p;
  p.image_size = j.at("image_size").get<int>();
  p.n_rows_min = j.at("n_rows_min").get<int>();
  p.n_rows_max = j.at("n_rows_max").get<int>();
  p.angle_min = j.at("angle_min").get<double>();
  p.angle_max = j.at("angle_max").get<double>();
  p.inter_row_distance = j.at("inter_row_distance").get<double>();
  p.spacing_jitter = j.at("spacing_jitter").get<double>();
  p.end_jitter = j.at("end_jitter").get<double>();
  p.border_jitter = j.at("border_jitter").get<double>();
  p.border_tilt_max = j.at("border_tilt_max").get<double>();
  p.row_angle_jitter = j.at("row_angle_jitter").get<double>();
  p.row_radius_min = j.at("row_radius_min").get<int>();
  p.row_radius_max = j.at("row_radius_max").get<int>();
  p.hole_probability = j.at("hole_probability").get<double>();
  p.rescale_min = j.at("rescale_min").get<double>();
  p.rescale_max = j.at("rescale_max").get<double>();
  return p;
}

inline nlohmann::json points_to_json(const std::vector<Point>& pts) {
  auto arr = nlohmann::json::array();
  for (Point p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline std::vector<Point> points_from_json(const nlohmann::json& arr) {
  std::vector<Point> pts;
  for (const auto& e : arr) pts.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return pts;
}

inline nlohmann::json truth_to_json(const FieldTruth& t) {
  auto rows = nlohmann::json::array();
  for (const auto& r : t.rows) rows.push_back({r.start.x, r.start.y, r.end.x, r.end.y});
  return {{"angle", t.angle.radians()},
          {"rows", rows},
          {"waypoints_a", points_to_json(t.waypoints_a)},
          {"waypoints_b", points_to_json(t.waypoints_b)},
          {"seed", t.seed}};
}

// The grid is not part of the truth file; it stays empty here.
inline FieldTruth truth_from_json(const nlohmann::json& j) {
  FieldTruth t;
  t.angle = Angle(j.at("angle").get<double>());
  for (const auto& r : j.at("rows")) {
    Row row;
    row.start = {r.at(0).get<double>(), r.at(1).get<double>()};
    row.end = {r.at(2).get<double>(), r.at(3).get<double>()};
    row.centre = (row.start + row.end) * 0.5;
    t.rows.push_back(row);
  }
  t.waypoints_a = points_from_json(j.at("waypoints_a"));
  t.waypoints_b = points_from_json(j.at("waypoints_b"));
  t.seed = j.value("seed", std::uint64_t{0});
  return t;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw storage_error("cannot open: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw storage_error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw storage_error("write failed: " + path.string());
}

inline FieldTruth read_truth(const std::filesystem::path& path) {
  try {
    return truth_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path.string() + ": " + e.what());
  }
}

// ---- datasets ------------------------------------------------------------

struct ManifestItem {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::string mask;   // relative to the manifest directory
  std::string truth;  // relative to the manifest directory
};

struct Manifest {
  std::uint64_t master_seed = 0;
  FieldParams params;
  std::vector<ManifestItem> items;
  std::filesystem::path directory;

  std::filesystem::path mask_path(std::size_t i) const { return directory / items.at(i).mask; }
  std::filesystem::path truth_path(std::size_t i) const { return directory / items.at(i).truth; }
};

inline std::uint64_t item_seed(std::uint64_t master_seed, std::size_t index) { return mix_seed(master_seed, index); }

inline nlohmann::json manifest_to_json(const Manifest& m) {
  auto items = nlohmann::json::array();
  for (const auto& it : m.items)
    items.push_back({{"index", it.index}, {"seed", it.seed}, {"mask", it.mask}, {"truth", it.truth}});
  return {{"rng", Rng::algorithm},
          {"seed_derivation", "splitmix64(master_seed + 0x9E3779B97F4A7C15 * (index + 1))"},
          {"master_seed", m.master_seed},
          {"count", m.items.size()},
          {"params", to_json(m.params)},
          {"items", items}};
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    Manifest m;
    m.directory = path.parent_path();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.params = field_params_from_json(j.at("params"));
    for (const auto& it : j.at("items"))
      m.items.push_back({it.at("index").get<std::size_t>(), it.at("seed").get<std::uint64_t>(),
                         it.at("mask").get<std::string>(), it.at("truth").get<std::string>()});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path.string() + ": " + e.what());
  }
}

inline std::string item_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return buf;
}

inline void write_field_files(const std::filesystem::path& dir, std::size_t index, const FieldTruth& t) {
  write_mask_png(dir / ("mask_" + item_stem(index) + ".png"), t.grid);
  write_json_file(dir / ("truth_" + item_stem(index) + ".json"), truth_to_json(t));
}

// Writes count mask/truth pairs plus manifest.json into destination.
inline Manifest generate_dataset(std::uint64_t seed, std::size_t count, const FieldParams& params,
                                 const std::filesystem::path& destination) {
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(destination, ec);
  if (ec) throw storage_error("cannot create " + destination.string() + ": " + ec.message());

  Manifest m;
  m.master_seed = seed;
  m.params = params;
  m.directory = destination;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = item_seed(seed, i);
    write_field_files(destination, i, generate_field(s, params));
    m.items.push_back({i, s, "mask_" + item_stem(i) + ".png", "truth_" + item_stem(i) + ".json"});
  }
  write_json_file(destination / "manifest.json", manifest_to_json(m));
  return m;
}

}  // namespace deepway
