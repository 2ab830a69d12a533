#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nuta/error.hpp"

namespace nuta {

// Flat "key = value" text format. '#' starts a comment, blank lines are
// skipped. Every key must be consumed by the reader; leftovers are reported
// as unknown keys so typos fail loudly instead of silently using defaults.
class KeyValues {
 public:
  static KeyValues from_file(const std::string& path);
  static KeyValues from_string(const std::string& text, const std::string& origin);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key);
  std::string get_str(const std::string& key, const std::string& fallback);
  int64_t get_int(const std::string& key);
  int64_t get_int(const std::string& key, int64_t fallback);
  double get_double(const std::string& key);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int64_t> get_int_list(const std::string& key,
                                    const std::vector<int64_t>& fallback);

  // Throws ConfigError if any key was never read.
  void finish() const;

  const std::string& origin() const { return origin_; }

 private:
  std::string raw(const std::string& key);
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

enum class FusionKind { nonlocal, sum, concat };
enum class HeadInput { both, uniform_only };
enum class BlockKind { basic, bottleneck };
enum class InflatePattern { none, alternating, all };

FusionKind parse_fusion_kind(const std::string& s);
HeadInput parse_head_input(const std::string& s);
const char* to_string(FusionKind k);
const char* to_string(HeadInput h);

struct StageConfig {
  int64_t index = 0;  // 2-based stage naming (stage2 is the first)
  int64_t blocks = 1;
  int64_t channels = 1;
  int64_t spatial_stride = 1;   // applied by the first block
  int64_t temporal_stride = 1;  // applied by the first block (strided variants)
  BlockKind block = BlockKind::basic;
  int64_t mid_channels = 0;     // bottleneck middle width; 0 = channels / 4
  int64_t temporal_kernel = 3;  // basic blocks: conv1 temporal extent (1 or 3)
  InflatePattern inflate = InflatePattern::alternating;  // bottleneck conv1 extents
};

struct NetworkConfig {
  int64_t classes = 8;
  int64_t input_channels = 3;
  int64_t input_frames = 8;   // default clip geometry (flops tooling, checks)
  int64_t input_size = 32;

  int64_t stem_channels = 8;
  int64_t stem_temporal_kernel = 1;
  int64_t stem_spatial_kernel = 3;
  int64_t stem_spatial_stride = 2;
  int64_t stem_temporal_stride = 1;
  bool stem_pool = false;  // extra 2x2 spatial average pool after the stem

  std::vector<StageConfig> stages;      // consecutive, indexed from 2
  std::vector<int64_t> nuta_stages;     // stage indices carrying a NUTA module
  int64_t nuta_heads = 4;
  int64_t nuta_groups = 8;              // conv groups inside the NUTA module
  FusionKind fusion = FusionKind::concat;
  HeadInput head_input = HeadInput::both;
  double dropout = 0.6;

  static NetworkConfig from_file(const std::string& path);
  static NetworkConfig from_keyvalues(KeyValues& kv);
  void validate() const;
};

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 16;
  double base_lr = 0.05;
  int64_t warmup_epochs = 0;  // linear ramp to base_lr over the first epochs
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int64_t> lr_drop_epochs;  // epochs (1-based) where lr is scaled
  double lr_drop_factor = 0.1;
  double clip_grad_norm = 0.0;  // global L2 gradient norm cap, 0 disables
  bool augment_flip = true;
  bool augment_time_shift = true;
  uint64_t seed = 1234;
  int64_t eval_batch_size = 32;

  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_keyvalues(KeyValues& kv);
  double lr_at_epoch(int64_t epoch) const;  // 1-based epoch
  void validate() const;
};

}  // namespace nuta
