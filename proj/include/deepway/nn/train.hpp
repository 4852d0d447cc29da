#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "deepway/datagen.hpp"
#include "deepway/image_io.hpp"
#include "deepway/nn/adam.hpp"
#include "deepway/nn/loss.hpp"
#include "deepway/nn/model.hpp"
#include "deepway/nn/targets.hpp"
#include "deepway/nn/weights.hpp"
#include "deepway/random.hpp"

namespace deepway::nn {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  LossWeights loss;
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw config_error("epochs must be >= 0");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (!(loss.waypoint >= 0.0 && loss.empty >= 0.0 && loss.waypoint + loss.empty > 0.0))
      throw config_error("loss weights must be non-negative with a positive sum");
    if (!(adam.learning_rate > 0.0) || !(adam.epsilon > 0.0)) throw config_error("learning rate and epsilon must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
      throw config_error("adam betas must lie in [0, 1)");
  }
};

// One training example: input mask and its (1, 3, U, U) targets.
struct Sample {
  OccupancyGrid grid;
  Tensor<float> target;
};

// Random-access view over training examples; samples are produced on demand
// so large datasets need not sit in memory.
struct SampleSource {
  std::size_t count = 0;
  std::function<Sample(std::size_t)> load;
};

inline SampleSource in_memory_source(std::vector<Sample> samples) {
  auto shared = std::make_shared<std::vector<Sample>>(std::move(samples));
  return {shared->size(), [shared](std::size_t i) { return shared->at(i); }};
}

inline Sample make_sample(const FieldTruth& truth, const ModelConfig& config, std::size_t* collisions = nullptr) {
  return {truth.grid, encode_targets<float>(truth, config, collisions)};
}

// Reads masks and truth files listed in a manifest. Masks are loaded lazily;
// the targets are encoded once up front, which also validates every truth
// file before training starts. Cell collisions are added to *collisions.
inline SampleSource manifest_source(const Manifest& manifest, const ModelConfig& config, std::size_t* collisions = nullptr,
                                    std::ostream* warn = &std::cerr) {
  auto targets = std::make_shared<std::vector<Tensor<float>>>();
  std::size_t clashes = 0;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    std::size_t c = 0;
    const FieldTruth t = read_truth(manifest.truth_path(i));
    std::vector<Point> all = t.waypoints_a;
    all.insert(all.end(), t.waypoints_b.begin(), t.waypoints_b.end());
    targets->push_back(encode_targets<float>(all, config.input_size, config.k(), &c));
    clashes += c;
  }
  if (clashes && warn) *warn << "warning: " << clashes << " waypoint cell collisions while encoding targets\n";
  if (collisions) *collisions += clashes;
  return {manifest.items.size(), [manifest, targets, config, warn](std::size_t i) {
            OccupancyGrid g = read_mask_png(manifest.mask_path(i), warn);
            if (g.width() != config.input_size || g.height() != config.input_size)
              throw shape_error(manifest.mask_path(i).string() + " is not " + std::to_string(config.input_size) + " px square");
            return Sample{std::move(g), targets->at(i)};
          }};
}

struct TrainOptions {
  std::filesystem::path checkpoint;  // rewritten after every epoch when set
  std::ostream* log = nullptr;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  Model<float> model;
  std::vector<double> epoch_loss;  // mean per-image loss, one entry per epoch
};

// Seeded Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return order;
}

// Mini-batch Adam over a seeded shuffle of the data. Items of a batch are run
// one after another and their gradients summed in batch order, so results do
// not depend on scheduling. Throws training_error when the loss or a
// gradient stops being finite; the checkpoint then holds the last good epoch.
inline TrainResult train(const SampleSource& data, const ModelConfig& model_config, const TrainConfig& config,
                         const TrainOptions& options = {}) {
  config.validate();
  Model<float> model(model_config);
  model.initialize(mix_seed(config.seed, 0));
  if (!options.checkpoint.empty()) save_weights(model, options.checkpoint);
  if (config.epochs > 0 && data.count == 0) throw argument_error("training set is empty");

  const auto u = static_cast<std::size_t>(model_config.grid_size());
  auto state = AdamState<float>::for_parameters(model.parameters());
  std::vector<double> history;
  const std::string keep = options.checkpoint.empty() ? std::string("no checkpoint kept")
                                                      : "last good checkpoint: " + options.checkpoint.string();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(data.count, mix_seed(config.seed, 1 + static_cast<std::uint64_t>(epoch)));
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      auto grads = model.zero_gradients();
      double batch_total = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        Sample s = data.load(order[b]);
        require_shape(s.target, {1, 3, u, u}, "training target");
        typename Model<float>::Cache cache;
        const auto y = model.forward(grid_to_tensor<float>(s.grid), &cache);
        Tensor<float> dy;
        const double l = waypoint_loss(s.target, y, config.loss, &dy);
        if (!std::isfinite(l))
          throw training_error("loss became non-finite at epoch " + std::to_string(epoch + 1) + "; " + keep);
        batch_total += l;
        model.backward(cache, dy, grads);
      }
      const float scale = 1.0f / static_cast<float>(end - start);
      for (auto& g : grads)
        for (auto& v : g.values()) v *= scale;
      try {
        adam_step(model.parameters(), grads, state, config.adam);
      } catch (const training_error& e) {
        throw training_error(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + "; " + keep);
      }
      for (const auto& p : model.parameters())
        if (!p.all_finite()) throw training_error("parameters became non-finite at epoch " + std::to_string(epoch + 1) + "; " + keep);
      epoch_total += batch_total;
    }
    const double mean = epoch_total / static_cast<double>(data.count);
    history.push_back(mean);
    if (!options.checkpoint.empty()) save_weights(model, options.checkpoint);
    if (options.log) *options.log << "epoch " << epoch + 1 << "/" << config.epochs << " loss " << mean << '\n';
    if (options.on_epoch) options.on_epoch(epoch + 1, mean);
  }
  return {std::move(model), std::move(history)};
}

}  // namespace deepway::nn
