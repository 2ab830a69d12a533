#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nuta {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // worst deviation or first mismatch on failure
};

// Structural invariants of the aggregation machinery, checked on randomized
// inputs with a fixed seed:
//  - projection_rows_stochastic: every row of M is non-negative and sums to 1
//    within 1e-6, swept over T in {4,6,8} and heads in {1,2,4};
//  - projection_constant_input_uniform: a temporally constant clip yields the
//    uniform map (every entry within 1e-6 of 1/T), same sweep;
//  - gamma_inverse_bitwise: gamma_inverse(gamma(x)) reproduces x exactly;
//  - softmax_shift_invariance: adding a per-row constant leaves softmax
//    unchanged within 1e-12;
//  - head_channel_independence: with conv groups equal to heads, perturbing
//    the channels of one head leaves every other head's map bitwise intact;
//  - batch_independence: the map of a stacked batch equals the per-sample
//    maps bitwise;
//  - replicate_pad_time_constancy: a temporally constant input stays exactly
//    constant through an edge-replicated temporal convolution;
//  - backward_linearity: gradients are linear in the loss, d(a*L1 + b*L2) =
//    a*dL1 + b*dL2 within 1e-9.
std::vector<CheckResult> run_property_checks(uint64_t seed);

}  // namespace nuta
