#pragma once

#include "deepway/nn/tensor.hpp"

namespace deepway::nn {

struct LossWeights {
  double waypoint = 0.7;
  double empty = 0.3;
};

// Weighted sum-squared error over (B, 3, U, U) tensors, averaged over the
// batch. Cells whose target confidence is 1 are penalized on all three
// channels with weight `waypoint`; empty cells only on the confidence channel
// with weight `empty`. When grad is given it receives dL/d(prediction).
template <typename T>
T waypoint_loss(const Tensor<T>& target, const Tensor<T>& prediction, LossWeights w, Tensor<T>* grad = nullptr) {
  require_rank(target, 4, "loss target");
  if (target.shape() != prediction.shape())
    throw shape_error("loss: target " + shape_string(target.shape()) + " vs prediction " + shape_string(prediction.shape()));
  if (target.dim(1) != 3) throw shape_error("loss: expected 3 channels");
  const std::size_t batch = target.dim(0), plane = target.dim(2) * target.dim(3);
  if (grad) *grad = Tensor<T>(target.shape());
  const T inv_batch = T(1) / static_cast<T>(batch);
  T total = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* y = target.item(n);
    const T* p = prediction.item(n);
    T* g = grad ? grad->item(n) : nullptr;
    for (std::size_t i = 0; i < plane; ++i) {
      const bool has_wp = y[i] > T(0.5);
      if (has_wp) {
        const T lw = static_cast<T>(w.waypoint);
        for (std::size_t c = 0; c < 3; ++c) {
          const T d = p[c * plane + i] - y[c * plane + i];
          total += lw * d * d;
          if (g) g[c * plane + i] = 2 * lw * d * inv_batch;
        }
      } else {
        const T lw = static_cast<T>(w.empty);
        const T d = p[i] - y[i];
        total += lw * d * d;
        if (g) g[i] = 2 * lw * d * inv_batch;
      }
    }
  }
  return total * inv_batch;
}

}  // namespace deepway::nn
