#pragma once

#include <utility>

#include "nuta/nn_ops.hpp"
#include "nuta/tensor.hpp"

namespace nuta {

// Multi-head split along channels: heads must divide the channel extent at
// the point of use.
struct HeadLayout {
  int64_t heads = 1;
};

// The learned projection map M with shape [N, heads, S, T]: row s holds the
// mixture weights that produce aggregated step s from the T source steps.
// Rows are non-negative and sum to 1 over the source axis.
struct ProjectionMap {
  Tensor values;

  int64_t batch() const { return values.shape()[0]; }
  int64_t heads() const { return values.shape()[1]; }
  int64_t target_steps() const { return values.shape()[2]; }
  int64_t source_steps() const { return values.shape()[3]; }
};

// Parameters of one non-uniform aggregation module. All four feature
// transforms are temporal (3,1,1) convolutions with same padding
// (edge-replicated on the temporal axis), grouped and bias-free; compress is
// a pointwise (1,1,1) convolution shared between the aggregation output and
// the temporal synchronisation output.
struct NutaModuleParams {
  Conv3dParams phi;       // query transform, applied to the pooled feature
  Conv3dParams theta;     // key transform, applied to the full-rate feature
  Conv3dParams delta;     // value transform for aggregation
  Conv3dParams zeta;      // value transform for synchronisation
  Conv3dParams compress;  // shared output projection
  HeadLayout layout;

  static NutaModuleParams make(int64_t channels, int64_t heads, int64_t conv_groups,
                               Rng& rng);
};

// [N, C, T, H, W] -> [N, heads, T, (C/heads) * H * W], a pure data movement
// (reshape, permute, reshape). gamma_inverse undoes it bitwise.
Tensor gamma(const Tensor& x, const HeadLayout& layout);
Tensor gamma_inverse(const Tensor& g, int64_t channels, int64_t height, int64_t width);

// Builds M = softmax(gamma(phi(pool(F))) x gamma(theta(F))^T) over the
// source-time axis. F is [N, C, T, H, W] with T even; M is [N, n, T/2, T].
ProjectionMap projection_map(const Tensor& f, const NutaModuleParams& p);

// Applies an existing map: compress(gamma_inverse(M x gamma(delta(F)))).
// Exposed separately so a hand-built M (e.g. one-hot rows) can drive it.
Tensor nuta_aggregate(const Tensor& f, const ProjectionMap& m, const NutaModuleParams& p);

// Full module: returns the aggregated feature [N, C', T/2, H, W] and the map.
std::pair<Tensor, ProjectionMap> nuta_forward(const Tensor& f, const NutaModuleParams& p);

// Aligns the uniform branch with the halved timeline:
//   compress(gamma_inverse(M x gamma(zeta(F_res)))) + temporal_maxpool2(F_res).
Tensor temporal_sync(const Tensor& f_res, const ProjectionMap& m,
                     const NutaModuleParams& p);

}  // namespace nuta
