// deepway: synthetic data, training, waypoint detection, route planning,
// evaluation and overlay rendering for row-crop occupancy grids.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepway/datagen.hpp"
#include "deepway/decode.hpp"
#include "deepway/eval.hpp"
#include "deepway/image_io.hpp"
#include "deepway/nn/train.hpp"
#include "deepway/nn/weights.hpp"
#include "deepway/order.hpp"
#include "deepway/pipeline.hpp"
#include "deepway/plan.hpp"
#include "deepway/render.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace deepway;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw storage_error("cannot create " + dir.string() + ": " + ec.message());
}

void write_run_config(const fs::path& dir, const std::string& command, json params) {
  params["command"] = command;
  write_json_file(dir / "run_config.json", params);
}

// ---- shared option groups ---------------------------------------------------------------

struct FieldFlags {
  int size = 800;
  std::optional<int> rows_min, rows_max;
  FieldParams base;

  void add(CLI::App* app) {
    app->add_option("--size", size, "image side in pixels")->capture_default_str();
    app->add_option("--rows-min", rows_min, "fewest rows per field (default scales with --size)");
    app->add_option("--rows-max", rows_max, "most rows per field (default scales with --size)");
    app->add_option("--angle-min", base.angle_min, "row angle range start, radians")->capture_default_str();
    app->add_option("--angle-max", base.angle_max, "row angle range end, radians")->capture_default_str();
    app->add_option("--spacing", base.inter_row_distance, "mean inter-row distance in px, 0 = automatic")->capture_default_str();
    app->add_option("--spacing-jitter", base.spacing_jitter)->capture_default_str();
    app->add_option("--end-jitter", base.end_jitter)->capture_default_str();
    app->add_option("--border-jitter", base.border_jitter)->capture_default_str();
    app->add_option("--border-tilt-max", base.border_tilt_max)->capture_default_str();
    app->add_option("--row-angle-jitter", base.row_angle_jitter)->capture_default_str();
    app->add_option("--radius-min", base.row_radius_min)->capture_default_str();
    app->add_option("--radius-max", base.row_radius_max)->capture_default_str();
    app->add_option("--holes", base.hole_probability, "per-pixel hole probability")->capture_default_str();
    app->add_option("--rescale-min", base.rescale_min)->capture_default_str();
    app->add_option("--rescale-max", base.rescale_max)->capture_default_str();
  }

  FieldParams resolve() const {
    const FieldParams sized = FieldParams::for_size(size);
    FieldParams p = base;
    p.image_size = size;
    p.n_rows_min = rows_min.value_or(sized.n_rows_min);
    p.n_rows_max = rows_max.value_or(sized.n_rows_max);
    p.validate();
    return p;
  }
};

struct PipelineFlags {
  DecodeConfig decode;
  PlanConfig plan;
  std::optional<double> eps;
  std::size_t min_pts = 3;

  void add(CLI::App* app, bool planning) {
    app->add_option("--tc", decode.t_c, "confidence threshold")->capture_default_str();
    app->add_option("--dc", decode.d_c, "suppression distance in px")->capture_default_str();
    if (!planning) return;
    app->add_option("--w", plan.w, "A* heuristic weight")->capture_default_str();
    app->add_option("--inflation", plan.inflation, "obstacle dilation radius in px")->capture_default_str();
    app->add_option("--eps", eps, "clustering radius in px (default from nearest-neighbour spacing)");
    app->add_option("--min-pts", min_pts, "clustering density threshold")->capture_default_str();
  }

  PipelineConfig resolve(int k) const {
    PipelineConfig c;
    c.decode = decode;
    c.decode.k = k;
    c.decode.validate();
    c.plan = plan;
    c.order.eps = eps;
    c.order.min_pts = min_pts;
    return c;
  }

  json to_json() const {
    return {{"t_c", decode.t_c}, {"d_c", decode.d_c}, {"k", decode.k}, {"w", plan.w}, {"inflation", plan.inflation},
            {"eps", eps ? json(*eps) : json(nullptr)}, {"min_pts", min_pts}};
  }
};

// ---- gen ---------------------------------------------------------------------------------------

struct GenCommand {
  std::uint64_t seed = 0;
  std::size_t count = 10;
  FieldFlags field;
  fs::path out = "data";

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("gen", "generate synthetic masks with ground truth");
    c->add_option("--seed", seed)->capture_default_str();
    c->add_option("--count", count)->capture_default_str();
    c->add_option("--out", out, "output directory")->capture_default_str();
    field.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    const FieldParams params = field.resolve();
    const Manifest m = generate_dataset(seed, count, params, out);
    write_run_config(out, "gen", {{"seed", seed}, {"count", count}, {"params", to_json(params)}});
    std::cerr << "wrote " << m.items.size() << " fields to " << out.string() << '\n';
  }
};

// ---- train ------------------------------------------------------------------------------------

struct ModelFlags {
  nn::ModelConfig config;

  void add(CLI::App* app) {
    app->add_option("--modules", config.n_modules, "downsampling modules")->capture_default_str();
    app->add_option("--filters", config.filters)->capture_default_str();
    app->add_option("--kernel-first", config.first_kernel)->capture_default_str();
    app->add_option("--kernel-inner", config.inner_kernel)->capture_default_str();
    app->add_option("--kernel-last", config.last_kernel)->capture_default_str();
    app->add_option("--reduction", config.attention_reduction, "channel attention reduction ratio")->capture_default_str();
    app->add_option("--spatial-kernel", config.spatial_kernel)->capture_default_str();
  }
};

struct TrainCommand {
  fs::path manifest;
  fs::path out = "model";
  ModelFlags model;
  nn::TrainConfig train;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("train", "train the waypoint network on a generated dataset");
    c->add_option("manifest", manifest, "manifest.json written by gen")->required();
    c->add_option("--out", out, "output directory")->capture_default_str();
    c->add_option("--seed", train.seed)->capture_default_str();
    c->add_option("--epochs", train.epochs)->capture_default_str();
    c->add_option("--batch", train.batch_size)->capture_default_str();
    c->add_option("--lr", train.adam.learning_rate)->capture_default_str();
    c->add_option("--beta1", train.adam.beta1)->capture_default_str();
    c->add_option("--beta2", train.adam.beta2)->capture_default_str();
    c->add_option("--adam-eps", train.adam.epsilon)->capture_default_str();
    c->add_option("--lambda-wp", train.loss.waypoint, "loss weight of waypoint cells")->capture_default_str();
    c->add_option("--lambda-empty", train.loss.empty, "loss weight of empty cells")->capture_default_str();
    model.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    const Manifest m = read_manifest(manifest);
    nn::ModelConfig cfg = model.config;
    cfg.input_size = m.params.image_size;
    cfg.validate();
    train.validate();
    ensure_dir(out);
    write_run_config(out, "train",
                     {{"manifest", fs::absolute(manifest).string()},
                      {"model", nn::to_json(cfg)},
                      {"seed", train.seed},
                      {"epochs", train.epochs},
                      {"batch_size", train.batch_size},
                      {"learning_rate", train.adam.learning_rate},
                      {"beta1", train.adam.beta1},
                      {"beta2", train.adam.beta2},
                      {"adam_epsilon", train.adam.epsilon},
                      {"lambda_waypoint", train.loss.waypoint},
                      {"lambda_empty", train.loss.empty}});

    const auto source = nn::manifest_source(m, cfg);
    std::ofstream log(out / "loss.csv");
    if (!log) throw storage_error("cannot open for writing: " + (out / "loss.csv").string());
    log << "epoch,loss\n" << std::setprecision(17);
    nn::TrainOptions opts;
    opts.checkpoint = out / "checkpoint.dway";
    opts.log = &std::cerr;
    opts.on_epoch = [&log](int epoch, double loss) { log << epoch << ',' << loss << std::endl; };
    const auto result = nn::train(source, cfg, train, opts);
    nn::save_weights(result.model, out / "weights.dway");
    std::cerr << "wrote " << (out / "weights.dway").string() << '\n';
  }
};

// ---- predict ----------------------------------------------------------------------------------

struct PredictCommand {
  fs::path mask, weights;
  fs::path out = "prediction";
  PipelineFlags flags;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("predict", "detect waypoints in a mask");
    c->add_option("mask", mask, "input PNG mask")->required();
    c->add_option("--weights", weights, "trained weights file")->required();
    c->add_option("--out", out, "output directory")->capture_default_str();
    flags.add(c, false);
    c->callback([this] { run(); });
  }

  void run() {
    const auto model = nn::load_weights(weights);
    const OccupancyGrid grid = read_mask_png(mask);
    flags.decode.k = model.config().k();
    const PipelineConfig cfg = flags.resolve(flags.decode.k);
    const auto points = detect(model, grid, cfg.decode);
    ensure_dir(out);
    write_waypoints(out / "waypoints.json", points);
    write_run_config(out, "predict",
                     {{"mask", fs::absolute(mask).string()}, {"weights", fs::absolute(weights).string()}, {"pipeline", flags.to_json()}});
    std::cerr << points.size() << " waypoints\n";
  }
};

// ---- plan -------------------------------------------------------------------------------------

// Waypoints from exactly one of: a weights file, a ground-truth file, a list.
struct WaypointSource {
  fs::path weights, oracle, waypoints;

  void add(CLI::App* app) {
    auto* w = app->add_option("--weights", weights, "trained weights file");
    auto* o = app->add_option("--oracle", oracle, "ground-truth file; its waypoints bypass the network");
    auto* l = app->add_option("--waypoints", waypoints, "waypoint list JSON; bypasses the network");
    w->excludes(o)->excludes(l);
    o->excludes(l);
  }

  bool given() const { return !weights.empty() || !oracle.empty() || !waypoints.empty(); }

  std::vector<Waypoint> load(const OccupancyGrid& grid, PipelineFlags& flags, std::optional<FieldTruth>* truth) const {
    if (!weights.empty()) {
      const auto model = nn::load_weights(weights);
      return detect(model, grid, flags.resolve(model.config().k()).decode);
    }
    if (!oracle.empty()) {
      FieldTruth t = read_truth(oracle);
      auto pts = truth_waypoints(t);
      if (truth) *truth = std::move(t);
      return pts;
    }
    return read_waypoints(waypoints);
  }

  json to_json() const {
    if (!weights.empty()) return {{"weights", fs::absolute(weights).string()}};
    if (!oracle.empty()) return {{"oracle", fs::absolute(oracle).string()}};
    return {{"waypoints", fs::absolute(waypoints).string()}};
  }
};

struct PlanCommand {
  fs::path mask;
  fs::path out = "plan";
  WaypointSource source;
  PipelineFlags flags;
  int scale = 2;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("plan", "order waypoints and plan a coverage path over a mask");
    c->add_option("mask", mask, "input PNG mask")->required();
    c->add_option("--out", out, "output directory")->capture_default_str();
    c->add_option("--scale", scale, "overlay upscaling factor")->capture_default_str();
    source.add(c);
    flags.add(c, true);
    c->callback([this] { run(); });
  }

  void run() {
    if (!source.given()) throw argument_error("plan needs one of --weights, --oracle or --waypoints");
    const OccupancyGrid grid = read_mask_png(mask);
    std::optional<FieldTruth> truth;
    auto points = source.load(grid, flags, &truth);
    const PipelineConfig cfg = flags.resolve(flags.decode.k);
    ensure_dir(out);
    json params = {{"mask", fs::absolute(mask).string()}, {"source", source.to_json()}, {"pipeline", flags.to_json()}};
    write_run_config(out, "plan", params);

    const auto r = plan_waypoints(grid, std::move(points), cfg);
    write_route(out / "route.json", r.order.route);
    write_plan(out / "plan.json", r.plan);
    RenderStyle style;
    style.scale = scale;
    write_png(out / "overlay.png", render_overlay(grid, &r.order.route, &r.plan, {}, style));
    std::cerr << r.order.route.sequence.size() << " waypoints, path of " << r.plan.pixels.size() << " px, cost " << r.plan.cost
              << '\n';
    if (truth && truth->rows.size() >= 2) {
      const auto cov = coverage_score(grid, r.plan, r.order.route, truth->rows.size() - 1);
      write_json_file(out / "coverage.json", coverage_to_json(cov));
      std::cerr << "coverage " << cov.score << '\n';
    }
  }
};

// ---- eval -------------------------------------------------------------------------------------

struct EvalCommand {
  fs::path manifest;
  fs::path weights, predictions;
  bool oracle = false;
  fs::path mask, route, plan;
  std::optional<std::size_t> corridors;
  std::vector<double> radii{2.0, 4.0, 8.0};
  bool coverage = true;
  fs::path out = "eval";
  PipelineFlags flags;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("eval", "average precision and coverage over a dataset, or coverage of one plan");
    auto* m = c->add_option("manifest", manifest, "manifest.json of the evaluation set");
    auto* w = c->add_option("--weights", weights, "run the network on every mask");
    auto* p = c->add_option("--predictions", predictions, "directory of waypoints_<index>.json lists");
    auto* o = c->add_flag("--oracle", oracle, "use the ground-truth waypoints as predictions");
    w->excludes(p)->excludes(o);
    p->excludes(o);
    auto* k = c->add_option("--mask", mask, "single mask to score a saved plan on");
    c->add_option("--route", route, "route.json for --mask");
    c->add_option("--plan", plan, "plan.json for --mask");
    c->add_option("--corridors", corridors, "corridor count for --mask (default estimated from the mask)");
    k->excludes(m);
    c->add_option("--rc", radii, "matching radii in px")->capture_default_str();
    c->add_flag("!--no-coverage", coverage, "skip ordering, planning and coverage");
    c->add_option("--out", out, "output directory")->capture_default_str();
    flags.add(c, true);
    c->callback([this] { run(); });
  }

  void run() {
    ensure_dir(out);
    if (!mask.empty()) return run_single();
    if (manifest.empty()) throw argument_error("eval needs a manifest or --mask");
    if (weights.empty() && predictions.empty() && !oracle)
      throw argument_error("eval needs one of --weights, --predictions or --oracle");

    const Manifest m = read_manifest(manifest);
    std::optional<nn::Model<float>> model;
    if (!weights.empty()) model = nn::load_weights(weights);
    const PipelineConfig cfg = flags.resolve(model ? model->config().k() : flags.decode.k);
    json params = {{"manifest", fs::absolute(manifest).string()}, {"radii", radii}, {"coverage", coverage},
                   {"pipeline", flags.to_json()}};
    if (model) params["weights"] = fs::absolute(weights).string();
    if (!predictions.empty()) params["predictions"] = fs::absolute(predictions).string();
    params["oracle"] = oracle;
    write_run_config(out, "eval", params);

    std::vector<ImageDetections> images;
    json per_image = json::array();
    double coverage_sum = 0.0;
    for (std::size_t i = 0; i < m.items.size(); ++i) {
      const FieldTruth truth = read_truth(m.truth_path(i));
      const OccupancyGrid grid = read_mask_png(m.mask_path(i));
      ImageDetections det;
      for (Point p : truth.waypoints_a) det.truth.push_back(p);
      for (Point p : truth.waypoints_b) det.truth.push_back(p);
      std::vector<Waypoint> route_input;
      if (model) {
        DecodeConfig all = cfg.decode;
        all.t_c = 0.0;
        det.predictions = decode(nn::predict(*model, grid), all);
        route_input = detect(*model, grid, cfg.decode);
      } else if (oracle) {
        det.predictions = truth_waypoints(truth);
        route_input = det.predictions;
      } else {
        det.predictions = read_waypoints(predictions / ("waypoints_" + item_stem(m.items[i].index) + ".json"));
        std::vector<Waypoint> kept;
        for (const auto& w : det.predictions)
          if (w.confidence > cfg.decode.t_c) kept.push_back(w);
        route_input = suppress(kept, cfg.decode.d_c);
      }
      json entry = {{"index", m.items[i].index}, {"detections", route_input.size()}};
      if (coverage) {
        const auto c = evaluate_coverage(grid, route_input, truth.rows.size() > 1 ? truth.rows.size() - 1 : 1, cfg);
        coverage_sum += c.score;
        entry["coverage"] = c.score;
        if (!c.error.empty()) entry["error"] = c.error;
      }
      per_image.push_back(entry);
      images.push_back(std::move(det));
    }

    std::vector<ApResult> aps;
    json report = {{"images", m.items.size()}};
    json ap_list = json::array();
    for (double r : radii) {
      aps.push_back(average_precision(images, r, {cfg.decode.d_c, 0.1}));
      ap_list.push_back(ap_to_json(aps.back()));
      std::cerr << "AP@" << r << " = " << aps.back().ap << '\n';
    }
    report["ap"] = ap_list;
    if (coverage) {
      report["mean_coverage"] = m.items.empty() ? 0.0 : coverage_sum / static_cast<double>(m.items.size());
      std::cerr << "mean coverage " << report["mean_coverage"].get<double>() << '\n';
    }
    report["per_image"] = per_image;
    write_json_file(out / "metrics.json", report);
    write_pr_csv(out / "pr_curve.csv", aps);
  }

  void run_single() {
    if (route.empty() || plan.empty()) throw argument_error("--mask needs --route and --plan");
    const OccupancyGrid grid = read_mask_png(mask);
    const RouteOrder order = read_route(route);
    const PathPlan p = read_plan(plan);
    const std::size_t total = corridors.value_or(estimate_corridors(grid, order.angle));
    write_run_config(out, "eval", {{"mask", fs::absolute(mask).string()}, {"route", fs::absolute(route).string()},
                                   {"plan", fs::absolute(plan).string()}, {"corridors", total},
                                   {"corridors_estimated", !corridors.has_value()}});
    const auto cov = coverage_score(grid, p, order, total);
    write_json_file(out / "metrics.json", {{"coverage", coverage_to_json(cov)}, {"mean_coverage", cov.score}});
    std::cerr << "coverage " << cov.score << " (" << cov.covered << " of " << total << " corridors)\n";
  }
};

// ---- render -----------------------------------------------------------------------------------

struct RenderCommand {
  fs::path mask, route, plan, waypoints;
  fs::path out = "overlay.png";
  RenderStyle style;

  void add(CLI::App& app) {
    auto* c = app.add_subcommand("render", "draw a mask with waypoints and a path");
    c->add_option("mask", mask, "input PNG mask")->required();
    c->add_option("--route", route, "route.json");
    c->add_option("--plan", plan, "plan.json");
    c->add_option("--waypoints", waypoints, "waypoint list JSON, drawn unordered");
    c->add_option("--scale", style.scale)->capture_default_str();
    c->add_option("--disc", style.disc_radius, "waypoint disc radius in mask px")->capture_default_str();
    c->add_option("--stroke", style.stroke_width, "path width in mask px")->capture_default_str();
    c->add_option("--out", out, "output PNG")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() {
    const OccupancyGrid grid = read_mask_png(mask);
    std::optional<RouteOrder> r;
    std::optional<PathPlan> p;
    std::vector<Waypoint> loose;
    if (!route.empty()) r = read_route(route);
    if (!plan.empty()) p = read_plan(plan);
    if (!waypoints.empty()) loose = read_waypoints(waypoints);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    write_png(out, render_overlay(grid, r ? &*r : nullptr, p ? &*p : nullptr, loose, style));
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Row-crop waypoint detection and coverage path planning"};
  app.set_config("--config", "", "key = value file supplying defaults; flags override it");
  app.require_subcommand(1);

  GenCommand gen;
  TrainCommand train;
  PredictCommand predict;
  PlanCommand plan;
  EvalCommand eval;
  RenderCommand render;
  gen.add(app);
  train.add(app);
  predict.add(app);
  plan.add(app);
  eval.add(app);
  render.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const training_error& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return 3;
  } catch (const deepway::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
