#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nuta/tensor.hpp"

namespace nuta {

// Synthetic glyph-spotting clips. Each clip shows a sequence of noisy frames;
// a small set of "informative" frames carries the label glyph together with a
// class-agnostic beacon strip, while every other frame shows a distractor
// glyph from a different class and no beacon. Any single frame is therefore
// ambiguous about the label (distractors look just like labels), and frame
// averaging is noisy by construction: picking out the beacon-marked frames is
// the load-bearing skill.

struct DatasetMeta {
  int64_t num_clips = 0;
  int64_t classes = 8;
  int64_t channels = 3;
  int64_t frames = 8;
  int64_t height = 32;
  int64_t width = 32;
  int64_t informative = 2;  // beacon-marked frames per clip
};

struct ClipSample {
  std::vector<uint8_t> pixels;  // [C, T, H, W], values quantised to u8
  int64_t label = 0;
  uint32_t informative_mask = 0;  // bit t set = frame t is informative
};

struct Dataset {
  DatasetMeta meta;
  std::vector<ClipSample> samples;

  std::vector<int64_t> informative_frames(int64_t index) const;
};

// Glyph atlas: classes map to 10x10 binary masks, all of them symmetric under
// horizontal flip so mirror augmentation never changes the label.
constexpr int64_t kGlyphSize = 10;
const std::array<std::array<uint8_t, kGlyphSize * kGlyphSize>, 8>& glyph_masks();

// Split tags keep train/val sample streams disjoint for the same seed.
enum class Split : uint64_t { train = 1, val = 2 };

Dataset generate_dataset(const DatasetMeta& meta, uint64_t seed, Split split);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Assembles clips into a [N, C, T, H, W] tensor scaled to [0, 1]. flip
// mirrors the width axis; time_shift rotates the frame axis circularly (the
// returned masks are rotated to match).
struct Batch {
  Tensor clips;
  std::vector<int64_t> labels;
  std::vector<uint32_t> informative_masks;
};

Batch make_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                 const std::vector<uint8_t>& flip, const std::vector<int64_t>& time_shift);

// Convenience: batch without augmentation.
Batch make_batch(const Dataset& ds, const std::vector<int64_t>& indices);

}  // namespace nuta
