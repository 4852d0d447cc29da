#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "deepway/core.hpp"
#include "deepway/nn/layers.hpp"
#include "deepway/nn/tensor.hpp"
#include "deepway/random.hpp"

namespace deepway::nn {

struct ModelConfig {
  int input_size = 800;
  int n_modules = 4;
  int filters = 16;
  int first_kernel = 7;
  int inner_kernel = 5;
  int last_kernel = 3;
  int attention_reduction = 16;
  int spatial_kernel = 7;

  // Grid cell size in input pixels: n_modules stride-2 reductions followed by
  // one stride-2 upsampling.
  int k() const { return 1 << (n_modules - 1); }
  int grid_size() const { return input_size / k(); }

  void validate() const {
    if (n_modules < 1) throw config_error("n_modules must be >= 1");
    if (filters < 1) throw config_error("filters must be >= 1");
    if (input_size <= 0 || input_size % (1 << n_modules) != 0)
      throw config_error("input_size must be a positive multiple of 2^n_modules");
    for (int kk : {first_kernel, inner_kernel, last_kernel, spatial_kernel})
      if (kk < 1 || kk % 2 == 0) throw config_error("kernel sizes must be odd and positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Fully convolutional waypoint regressor: stem conv, a stack of residual
// reduction modules (conv + Mish, channel attention, spatial attention,
// residual add, stride-2 conv + Mish), a stride-2 transpose conv summed with
// the output of the second-to-last module, and a 3-channel head producing
// (sigmoid confidence, tanh dx, tanh dy) per cell.
template <typename T>
class Model {
 public:
  struct Block {
    std::size_t conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, sa_w, down_w, down_b;
  };

  struct BlockCache {
    Tensor<T> input, conv_pre, conv_out, ca_out, sa_out, sum, down_pre;
    ChannelAttentionCache<T> ca;
    SpatialAttentionCache<T> sa;
  };

  struct Cache {
    Tensor<T> input, stem_pre;
    std::vector<BlockCache> blocks;
    Tensor<T> last;  // output of the final module
    Tensor<T> up_pre, merged, head_pre;
  };

  Model() = default;
  explicit Model(const ModelConfig& config, std::ostream* warn = &std::cerr) : config_(config) {
    config_.validate();
    const auto f = static_cast<std::size_t>(config_.filters);
    const auto ca = ChannelAttentionShape::make(config_.filters, config_.attention_reduction, warn);
    const auto hid = static_cast<std::size_t>(ca.hidden);
    const auto k1 = static_cast<std::size_t>(config_.first_kernel);
    const auto k5 = static_cast<std::size_t>(config_.inner_kernel);
    const auto k3 = static_cast<std::size_t>(config_.last_kernel);
    const auto ks = static_cast<std::size_t>(config_.spatial_kernel);

    stem_w_ = add("stem.weight", {f, 1, k1, k1});
    stem_b_ = add("stem.bias", {f});
    for (int m = 0; m < config_.n_modules; ++m) {
      const std::string p = "block" + std::to_string(m) + ".";
      Block b{};
      b.conv_w = add(p + "conv.weight", {f, f, k5, k5});
      b.conv_b = add(p + "conv.bias", {f});
      b.fc1_w = add(p + "channel_attention.fc1.weight", {hid, f});
      b.fc1_b = add(p + "channel_attention.fc1.bias", {hid});
      b.fc2_w = add(p + "channel_attention.fc2.weight", {f, hid});
      b.fc2_b = add(p + "channel_attention.fc2.bias", {f});
      b.sa_w = add(p + "spatial_attention.weight", {1, 2, ks, ks});
      b.down_w = add(p + "down.weight", {f, f, k5, k5});
      b.down_b = add(p + "down.bias", {f});
      blocks_.push_back(b);
    }
    up_w_ = add("up.weight", {f, f, k5, k5});
    up_b_ = add("up.bias", {f});
    head_w_ = add("head.weight", {3, f, k3, k3});
    head_b_ = add("head.bias", {3});
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<Tensor<T>>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  // Zero-filled tensors matching every parameter.
  std::vector<Tensor<T>> zero_gradients() const {
    std::vector<Tensor<T>> g;
    for (const auto& p : params_) g.emplace_back(p.shape());
    return g;
  }

  // He-style uniform initialization, biases zero.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.rank() == 1) {
        p.fill(T(0));
        continue;
      }
      std::size_t fan_in = p.size() / p.dim(0);
      if (i == up_w_) fan_in = p.dim(0) * p.dim(2) * p.dim(3);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : p.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  // x: (B, 1, S, S) -> (B, 3, S/k, S/k).
  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    const auto s = static_cast<std::size_t>(config_.input_size);
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != s || x.dim(3) != s)
      throw shape_error("model input must be (B, 1, " + std::to_string(s) + ", " + std::to_string(s) + "), got " +
                        shape_string(x.shape()));
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = x;
    c.stem_pre = conv2d(x, params_[stem_w_], params_[stem_b_], 1);
    Tensor<T> h = mish(c.stem_pre);
    c.blocks.assign(blocks_.size(), {});
    Tensor<T> skip;
    for (std::size_t m = 0; m < blocks_.size(); ++m) {
      const Block& b = blocks_[m];
      BlockCache& bc = c.blocks[m];
      bc.input = std::move(h);
      bc.conv_pre = conv2d(bc.input, params_[b.conv_w], params_[b.conv_b], 1);
      bc.conv_out = mish(bc.conv_pre);
      bc.ca_out = channel_attention(bc.conv_out, params_[b.fc1_w], params_[b.fc1_b], params_[b.fc2_w], params_[b.fc2_b], &bc.ca);
      bc.sa_out = spatial_attention(bc.ca_out, params_[b.sa_w], &bc.sa);
      bc.sum = bc.sa_out;
      add_inplace(bc.sum, bc.input);
      bc.down_pre = conv2d(bc.sum, params_[b.down_w], params_[b.down_b], 2);
      h = mish(bc.down_pre);
      if (m + 2 == blocks_.size()) skip = h;
    }
    c.last = std::move(h);
    c.up_pre = transpose_conv2d(c.last, params_[up_w_], params_[up_b_]);
    c.merged = mish(c.up_pre);
    if (blocks_.size() >= 2)
      add_inplace(c.merged, skip);
    else
      add_inplace(c.merged, c.blocks[0].input);
    c.head_pre = conv2d(c.merged, params_[head_w_], params_[head_b_], 1);
    return activate_head(c.head_pre);
  }

  static Tensor<T> activate_head(const Tensor<T>& z) {
    Tensor<T> y(z.shape());
    const std::size_t plane = z.dim(2) * z.dim(3);
    for (std::size_t n = 0; n < z.dim(0); ++n)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const T* p = z.item(n) + ch * plane;
        T* q = y.item(n) + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] = ch == 0 ? sigmoid(p[i]) : std::tanh(p[i]);
      }
    return y;
  }

  // Gradient of the head activations given dL/d(output).
  static Tensor<T> activate_head_backward(const Tensor<T>& z, const Tensor<T>& dy) {
    Tensor<T> dz(z.shape());
    const std::size_t plane = z.dim(2) * z.dim(3);
    for (std::size_t n = 0; n < z.dim(0); ++n)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const T* p = z.item(n) + ch * plane;
        const T* g = dy.item(n) + ch * plane;
        T* d = dz.item(n) + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (ch == 0) {
            const T s = sigmoid(p[i]);
            d[i] = g[i] * s * (T(1) - s);
          } else {
            const T t = std::tanh(p[i]);
            d[i] = g[i] * (T(1) - t * t);
          }
        }
      }
    return dz;
  }

  // Accumulates dL/dparameters into grads given dL/d(output) of the forward
  // pass recorded in cache.
  void backward(const Cache& c, const Tensor<T>& dout, std::vector<Tensor<T>>& grads) const {
    Tensor<T> dz = activate_head_backward(c.head_pre, dout);
    Tensor<T> dmerged;
    conv2d_backward(c.merged, params_[head_w_], 1, dz, &dmerged, grads[head_w_], &grads[head_b_]);

    Tensor<T> dup_pre = mish_backward(c.up_pre, dmerged);
    Tensor<T> dlast;
    transpose_conv2d_backward(c.last, params_[up_w_], dup_pre, &dlast, grads[up_w_], &grads[up_b_]);

    // Gradient flowing into the output of module m (post down-sampling Mish).
    Tensor<T> dh = std::move(dlast);
    const std::size_t nb = blocks_.size();
    for (std::size_t mi = nb; mi-- > 0;) {
      if (nb >= 2 && mi + 2 == nb) add_inplace(dh, dmerged);
      const Block& b = blocks_[mi];
      const BlockCache& bc = c.blocks[mi];
      Tensor<T> ddown = mish_backward(bc.down_pre, dh);
      Tensor<T> dsum;
      conv2d_backward(bc.sum, params_[b.down_w], 2, ddown, &dsum, grads[b.down_w], &grads[b.down_b]);
      Tensor<T> dca = spatial_attention_backward(bc.ca_out, params_[b.sa_w], bc.sa, dsum, grads[b.sa_w]);
      Tensor<T> dconv = channel_attention_backward(bc.conv_out, params_[b.fc1_w], params_[b.fc2_w], bc.ca, dca,
                                                   grads[b.fc1_w], grads[b.fc1_b], grads[b.fc2_w], grads[b.fc2_b]);
      Tensor<T> dconv_pre = mish_backward(bc.conv_pre, dconv);
      Tensor<T> dinput;
      conv2d_backward(bc.input, params_[b.conv_w], 1, dconv_pre, &dinput, grads[b.conv_w], &grads[b.conv_b]);
      add_inplace(dinput, dsum);
      if (nb == 1) add_inplace(dinput, dmerged);
      dh = std::move(dinput);
    }
    Tensor<T> dstem = mish_backward(c.stem_pre, dh);
    conv2d_backward(c.input, params_[stem_w_], 1, dstem, static_cast<Tensor<T>*>(nullptr), grads[stem_w_], &grads[stem_b_]);
  }

  template <typename U>
  Model<U> cast() const {
    Model<U> m(config_, nullptr);
    for (std::size_t i = 0; i < params_.size(); ++i) m.parameters()[i] = params_[i].template cast<U>();
    return m;
  }

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    names_.push_back(std::move(name));
    params_.emplace_back(std::move(shape));
    return params_.size() - 1;
  }

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
  std::vector<Block> blocks_;
  std::size_t stem_w_ = 0, stem_b_ = 0, up_w_ = 0, up_b_ = 0, head_w_ = 0, head_b_ = 0;
};

// Occupancy grid as a (1, 1, H, W) tensor of 0/1 values.
template <typename T>
Tensor<T> grid_to_tensor(const OccupancyGrid& grid) {
  Tensor<T> t({1, 1, static_cast<std::size_t>(grid.height()), static_cast<std::size_t>(grid.width())});
  const auto cells = grid.cells();
  for (std::size_t i = 0; i < cells.size(); ++i) t[i] = static_cast<T>(cells[i]);
  return t;
}

}  // namespace deepway::nn
