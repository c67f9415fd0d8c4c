#pragma once

#include "nsae/tensor.hpp"

namespace nsae {

/// Cross-correlation. x [B,C,H,W], kernel [F,C,k,k], bias [F].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding);

/// Transposed convolution (gradient-of-convolution convention).
/// x [B,C,H,W], kernel [C,F,k,k], bias [F]; H' = (H-1)*stride - 2*padding + k.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>& bias, int stride, int padding);

/// Per-window max; gradient routes to the first maximal element in scan order.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride);

/// Differentiable bilinear resize of [B,C,H,W] to [B,C,oh,ow]; a fixed
/// linear map, so the backward pass is its transpose.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int oh, int ow);

enum class BnMode { kTrain, kEval, kTransductive };

/// Per-channel running statistics for one batch-norm layer. Plain buffers,
/// not part of the autodiff graph.
template <class T>
struct BnStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BnStats(int channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Batch normalization over [B,C,H,W] with per-channel affine parameters.
/// kTrain normalizes by batch statistics and updates running stats;
/// kEval uses running stats; kTransductive uses the current batch's
/// statistics without touching running stats. Requires B >= 2 except in
/// kEval mode.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BnStats<T>& stats, BnMode mode,
                      T momentum = T(0.1), T eps = T(1e-5));

}  // namespace nsae
