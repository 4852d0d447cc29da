#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "deepway/core.hpp"
#include "deepway/datagen.hpp"
#include "deepway/nn/model.hpp"
#include "deepway/nn/tensor.hpp"

namespace deepway::nn {

// Per-cell network output: confidence p in [0, 1] and offsets dx, dy in
// [-1, 1] relative to the cell centre.
struct PredictionGrid {
  int u_h = 0, u_w = 0;
  std::vector<double> p, dx, dy;  // row-major, u_h * u_w

  PredictionGrid() = default;
  PredictionGrid(int rows, int cols)
      : u_h(rows), u_w(cols), p(cells(rows, cols)), dx(cells(rows, cols)), dy(cells(rows, cols)) {}

  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * u_w + col; }

 private:
  static std::size_t cells(int rows, int cols) {
    if (rows < 0 || cols < 0) throw argument_error("negative prediction grid size");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }
};

// Item n of a (B, 3, U, U) head output.
template <typename T>
PredictionGrid to_prediction(const Tensor<T>& y, std::size_t n = 0) {
  require_rank(y, 4, "prediction tensor");
  if (y.dim(1) != 3) throw shape_error("prediction tensor must have 3 channels, got " + shape_string(y.shape()));
  if (n >= y.dim(0)) throw bounds_error("prediction item out of range");
  PredictionGrid g(static_cast<int>(y.dim(2)), static_cast<int>(y.dim(3)));
  const std::size_t plane = y.dim(2) * y.dim(3);
  const T* v = y.item(n);
  for (std::size_t i = 0; i < plane; ++i) {
    g.p[i] = static_cast<double>(v[i]);
    g.dx[i] = static_cast<double>(v[plane + i]);
    g.dy[i] = static_cast<double>(v[2 * plane + i]);
  }
  return g;
}

template <typename T>
PredictionGrid predict(const Model<T>& model, const OccupancyGrid& grid) {
  return to_prediction(model.forward(grid_to_tensor<T>(grid)));
}

// Training targets for one image as a (1, 3, U, U) tensor: the cell holding a
// waypoint gets confidence 1 and the offsets that place the cell's decoded
// point exactly on the waypoint. When two waypoints share a cell the first
// one is kept and the collision counted.
template <typename T = double>
Tensor<T> encode_targets(const std::vector<Point>& waypoints, int image_size, int k, std::size_t* collisions = nullptr) {
  if (k <= 0 || image_size <= 0 || image_size % k != 0)
    throw config_error("image size " + std::to_string(image_size) + " is not a positive multiple of k=" + std::to_string(k));
  const auto u = static_cast<std::size_t>(image_size / k);
  Tensor<T> t({1, 3, u, u});
  std::size_t clashes = 0;
  for (const Point& w : waypoints) {
    if (!(w.x >= 0.0 && w.y >= 0.0 && w.x < image_size && w.y < image_size))
      throw bounds_error("waypoint (" + std::to_string(w.x) + ", " + std::to_string(w.y) + ") outside the image");
    const double sx = w.x / k, sy = w.y / k;
    const auto col = static_cast<std::size_t>(std::floor(sx));
    const auto row = static_cast<std::size_t>(std::floor(sy));
    if (t.at(0, 0, row, col) != T(0)) {
      ++clashes;
      continue;
    }
    t.at(0, 0, row, col) = T(1);
    t.at(0, 1, row, col) = static_cast<T>(2.0 * (sx - std::floor(sx)) - 1.0);
    t.at(0, 2, row, col) = static_cast<T>(2.0 * (sy - std::floor(sy)) - 1.0);
  }
  if (collisions) *collisions = clashes;
  return t;
}

template <typename T = double>
Tensor<T> encode_targets(const FieldTruth& truth, const ModelConfig& config, std::size_t* collisions = nullptr) {
  if (truth.grid.width() != config.input_size || truth.grid.height() != config.input_size)
    throw shape_error("field is " + std::to_string(truth.grid.width()) + "x" + std::to_string(truth.grid.height()) +
                      ", model expects " + std::to_string(config.input_size));
  std::vector<Point> all = truth.waypoints_a;
  all.insert(all.end(), truth.waypoints_b.begin(), truth.waypoints_b.end());
  return encode_targets<T>(all, config.input_size, config.k(), collisions);
}

}  // namespace deepway::nn
