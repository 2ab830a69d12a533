#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nuta/config.hpp"
#include "nuta/nn_ops.hpp"
#include "nuta/nuta_module.hpp"
#include "nuta/ops.hpp"

namespace nuta {

struct ConvBn {
  Conv3dParams conv;
  BatchNormParams bn;
};

struct ResidualBlock {
  BlockKind kind = BlockKind::basic;
  ConvBn conv1;
  ConvBn conv2;
  ConvBn conv3;  // bottleneck only
  bool has_shortcut = false;
  ConvBn shortcut;
};

// Per-stage fusion that folds the aggregated branch back into the uniform
// branch before the stage's module runs. concat and sum use one pointwise
// projection; nonlocal adds a small temporal cross-attention whose output
// projection starts at zero so fusion begins as the identity.
struct FusionParams {
  FusionKind kind = FusionKind::concat;
  Conv3dParams proj;
  Conv3dParams query, key, value, out;  // nonlocal only
};

struct NutaStage {
  int64_t stage_index = 0;
  FusionParams fuse;
  NutaModuleParams module;
};

struct ForwardResult {
  Tensor logits;                    // [N, classes]
  std::vector<ProjectionMap> maps;  // one per module, in stage order
  Tensor uniform_feature;           // final uniform-branch feature
  Tensor nuta_feature;              // final aggregated feature (undefined without modules)
};

// Two-branch video classifier: a uniform residual backbone whose timeline is
// halved by temporal synchronisation at every module stage, alongside the
// chain of non-uniformly aggregated features.
class TwoBranchNet {
 public:
  TwoBranchNet(const NetworkConfig& cfg, uint64_t seed);

  ForwardResult forward(const Tensor& clip, bool train_mode, Rng& rng);

  // Exposed building blocks (tests and tooling drive them directly).
  Tensor stem_forward(const Tensor& clip, bool train_mode);
  Tensor residual_stage(int64_t stage_index, const Tensor& x, bool train_mode);
  // Seeds the aggregated branch from the uniform feature entering the first
  // module stage, pooled onto that stage's spatial extents.
  Tensor init_nuta_feature(const Tensor& uniform_feature, int64_t out_h, int64_t out_w);
  Tensor fuse(int64_t stage_index, const Tensor& u, const Tensor& f_nuta);
  Tensor classify_from(const Tensor& uniform_feature, const Tensor& nuta_feature,
                       bool train_mode, Rng& rng);

  const NetworkConfig& config() const { return cfg_; }
  bool is_nuta_stage(int64_t stage_index) const;
  const NutaModuleParams& module_at(int64_t stage_index) const;

  // Learnable tensors and non-learnable buffers (batch-norm statistics),
  // in deterministic construction order.
  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  std::vector<std::pair<std::string, Tensor>>& buffers() { return buffers_; }
  int64_t parameter_count() const;

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  Tensor block_forward(ResidualBlock& b, const Tensor& x, bool train_mode);
  void register_conv(const std::string& name, Conv3dParams& p);
  void register_bn(const std::string& name, BatchNormParams& p);

  NetworkConfig cfg_;
  ConvBn stem_;
  std::vector<std::vector<ResidualBlock>> stages_;
  std::map<int64_t, NutaStage> nuta_;
  Tensor head_weight_, head_bias_;
  std::set<int64_t> nuta_set_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

}  // namespace nuta
