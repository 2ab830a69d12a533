#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nuta/config.hpp"
#include "nuta/shape.hpp"

namespace nuta {

// Analytic inference cost, counted in multiply-accumulate operations (MACs).
// The walk mirrors the network's eval-mode forward pass layer by layer, with
// the same conventions the instrumented kernels use:
//   conv        out_elems * (Cin/groups) * kT * kH * kW
//   matmul      batch * P * K * Q
//   linear      N * in_features * out_features
//   batch norm  1 MAC per element (folded affine, eval mode)
//   softmax     2 per element (exp + divide)
//   avg pools   1 per output element
//   max pool, relu, add, concat, reshape, dropout(eval): free
// The cross-entropy loss is excluded: this is an inference walk.

struct LayerCost {
  std::string name;
  std::string group;  // stem | backbone | nuta | head
  Shape out;
  uint64_t macs = 0;
};

struct StageTrace {
  int64_t index = 0;
  Shape in;
  Shape out;       // after synchronisation for module stages
  bool nuta = false;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::vector<StageTrace> stages;
  Shape uniform_feature;  // final uniform-branch extents
  Shape nuta_feature;     // final aggregated extents (rank 0 when absent)
  uint64_t total_macs = 0;
  uint64_t stem_macs = 0;
  uint64_t backbone_macs = 0;
  uint64_t nuta_macs = 0;  // fusion + module + synchronisation
  uint64_t head_macs = 0;

  // FLOPs under the fused multiply-add convention (1 MAC = 1 FLOP) and under
  // the separate multiply/add convention (1 MAC = 2 FLOPs).
  double gflops_fused() const { return static_cast<double>(total_macs) * 1e-9; }
  double gflops_mul_add() const { return static_cast<double>(total_macs) * 2e-9; }
};

// Walks cfg on a [batch, input_channels, frames, size, size] clip. Throws
// ConfigError / ShapeError when the geometry violates the shape contracts
// (odd timeline at a module stage, indivisible pooling, ...).
CostReport count_flops(const NetworkConfig& cfg, int64_t batch, int64_t frames,
                       int64_t size);

// Formats the per-layer table plus group totals (human-oriented).
std::string format_report(const CostReport& report, const std::string& title);

// Machine-readable rows: name,group,out_shape,macs.
std::string report_csv(const CostReport& report);

}  // namespace nuta
