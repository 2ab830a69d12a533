#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nuta/rng.hpp"
#include "nuta/tensor.hpp"

namespace nuta {

// One differentiable computation to verify. `build` runs a fresh forward pass
// over the tensors in `wrt` (closing over them) and returns a scalar loss.
// It is called once with the tape recording to obtain analytic gradients and
// then repeatedly under NoGradGuard while coordinates of the inputs are
// nudged for central differences. It must therefore be a pure function of
// the current tensor contents; anything stochastic inside has to reseed
// itself per call.
struct GradCheck {
  std::string name;
  std::function<Tensor()> build;
  std::vector<Tensor> wrt;
  double tolerance = 1e-6;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  int64_t coords_checked = 0;
  bool passed = false;
};

// Central differences with step eps; relative error per coordinate is
// |fd - an| / max(|fd|, |an|, 1e-6). Checks every coordinate of each input
// up to max_coords_per_tensor, sampling uniformly past that.
GradCheckResult run_gradcheck(const GradCheck& check, double eps,
                              int64_t max_coords_per_tensor, Rng& rng);

// Gradient checks covering every differentiable operation plus a miniature
// end-to-end network (the network case uses a looser 1e-3 tolerance).
std::vector<GradCheckResult> gradcheck_suite(uint64_t seed);

}  // namespace nuta
