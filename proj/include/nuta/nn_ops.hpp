#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nuta/tensor.hpp"

namespace nuta {

// How out-of-range temporal taps are filled. Spatial padding is always
// zero-filled; the temporal axis additionally supports edge replication,
// which keeps temporally constant inputs exactly constant through a
// temporal kernel (the backbone and projection convolutions rely on that).
enum class TemporalPad { zero, replicate };

struct Conv3dParams {
  Tensor weight;  // [Cout, Cin/groups, kT, kH, kW]
  Tensor bias;    // [Cout], undefined handle = no bias
  std::array<int64_t, 3> stride{1, 1, 1};    // (sT, sH, sW)
  std::array<int64_t, 3> padding{0, 0, 0};   // (pT, pH, pW)
  int64_t groups = 1;
  TemporalPad temporal_pad = TemporalPad::zero;

  // Kaiming-style initialisation: weight ~ N(0, sqrt(2 / fan_in)) with
  // fan_in = (Cin/groups) * kT * kH * kW; bias (when present) zero.
  static Conv3dParams make(int64_t in_channels, int64_t out_channels,
                           std::array<int64_t, 3> kernel, std::array<int64_t, 3> stride,
                           std::array<int64_t, 3> padding, int64_t groups, bool with_bias,
                           TemporalPad temporal_pad, Rng& rng);
};

// Grouped cross-correlation over [N, C, T, H, W].
Tensor conv3d(const Tensor& x, const Conv3dParams& p);

// Temporal max-pool with kernel 2, stride 2. T must be even. Ties route the
// gradient to the earlier frame.
Tensor temporal_maxpool2(const Tensor& x);

// Block-mean spatial pooling down to (out_h, out_w); extents must divide.
Tensor spatial_pool_to(const Tensor& x, int64_t out_h, int64_t out_w);

// 2x2 spatial average pooling, stride 2. H and W must be even.
Tensor spatial_avgpool2(const Tensor& x);

// Mean over (T, H, W): [N, C, T, H, W] -> [N, C].
Tensor global_avgpool(const Tensor& x);

struct BatchNormParams {
  Tensor scale;  // gamma, [C], learnable
  Tensor shift;  // beta, [C], learnable
  // Running statistics, updated in train mode with
  //   r = (1 - momentum) * r + momentum * batch_stat
  // using biased batch variance (consistent between train and eval).
  Tensor running_mean;  // [C], buffer
  Tensor running_var;   // [C], buffer
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormParams make(int64_t channels);
};

// Per-channel batch normalisation over (N, T, H, W). Train mode uses batch
// statistics and updates the running buffers; eval mode applies the folded
// affine transform from the running statistics.
Tensor batchnorm3d(const Tensor& x, BatchNormParams& p, bool train_mode);

// Mean cross-entropy from raw logits [N, K] against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

}  // namespace nuta
