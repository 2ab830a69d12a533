#pragma once

#include <vector>

#include "nuta/tensor.hpp"

namespace nuta {

// Differentiable tensor primitives. All of them record onto the active tape
// when recording is on and any input requires a gradient. Shapes are checked
// eagerly; there is no broadcasting anywhere in this codebase.

// Batched matrix product: [..., P, K] x [..., K, Q] -> [..., P, Q] with
// identical leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);

// Softmax over the last axis. Validates that inputs are finite.
Tensor softmax_lastdim(const Tensor& x);

// Dense copy into a new extent list with the same element count.
Tensor reshape(const Tensor& x, const Shape& new_shape);

// Dense copy with axes reordered; axis_order is a permutation of 0..rank-1.
Tensor permute(const Tensor& x, const std::vector<int64_t>& axis_order);

// Swaps the last two axes (permute shorthand used around matmul).
Tensor transpose_last2(const Tensor& x);

// Concatenation along axis 1; every other extent must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Inverted dropout. Training mode draws one uniform per element from rng and
// rescales kept values by 1/(1-ratio); eval mode is the identity and draws
// nothing.
Tensor dropout(const Tensor& x, double ratio, bool train_mode, Rng& rng);

// Mean over the last num_dims axes; the result drops those axes.
Tensor mean_lastdims(const Tensor& x, int64_t num_dims);

// Fully connected layer: x [N, K], weight [M, K], bias [M] -> [N, M].
// bias may be an undefined handle to skip it.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace nuta
