#include "nuta/dataset.hpp"

#include <cstring>
#include <fstream>

#include "nuta/error.hpp"
#include "nuta/rng.hpp"

namespace nuta {

namespace {

std::array<std::array<uint8_t, kGlyphSize * kGlyphSize>, 8> build_glyphs() {
  std::array<std::array<uint8_t, kGlyphSize * kGlyphSize>, 8> g{};
  auto set = [&](int idx, int y, int x) {
    g[static_cast<size_t>(idx)][static_cast<size_t>(y * kGlyphSize + x)] = 1;
  };
  const int S = kGlyphSize;
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      bool border = y == 0 || y == S - 1 || x == 0 || x == S - 1;
      bool mid_col = x == S / 2 - 1 || x == S / 2;
      bool mid_row = y == S / 2 - 1 || y == S / 2;
      // 0: square outline
      if (border) set(0, y, x);
      // 1: plus
      if (mid_col || mid_row) set(1, y, x);
      // 2: X (both diagonals; symmetric under mirror)
      if (x == y || x == S - 1 - y) set(2, y, x);
      // 3: three horizontal bars
      if (y == 1 || mid_row || y == S - 2) set(3, y, x);
      // 4: single thick vertical bar
      if (mid_col) set(4, y, x);
      // 5: diamond outline
      {
        int dy = y < S / 2 ? S / 2 - 1 - y : y - S / 2;
        int dx = x < S / 2 ? S / 2 - 1 - x : x - S / 2;
        if (dy + dx == S / 2 - 1) set(5, y, x);
      }
      // 6: T shape
      if (y <= 1 || (mid_col && y > 1)) set(6, y, x);
      // 7: H shape
      if (x <= 1 || x >= S - 2 || mid_row) set(7, y, x);
    }
  }
  return g;
}

struct Color {
  uint8_t r, g, b;
};

// Seven saturated colors; the glyph identity never correlates with color.
constexpr Color kColors[7] = {{255, 0, 0},   {0, 255, 0},   {0, 0, 255}, {255, 255, 0},
                              {255, 0, 255}, {0, 255, 255}, {255, 255, 255}};

constexpr int64_t kBeaconRows = 2;
constexpr uint8_t kNoiseMax = 60;  // background noise amplitude (exclusive)
constexpr int64_t kGlyphMargin = 3;  // keep glyphs clear of the beacon strip

void draw_glyph(ClipSample& s, const DatasetMeta& m, int64_t t, int64_t top, int64_t left,
                int64_t glyph, Color c) {
  const auto& mask = glyph_masks()[static_cast<size_t>(glyph)];
  const uint8_t ch[3] = {c.r, c.g, c.b};
  int64_t plane = m.height * m.width;
  for (int64_t gy = 0; gy < kGlyphSize; ++gy) {
    for (int64_t gx = 0; gx < kGlyphSize; ++gx) {
      if (!mask[static_cast<size_t>(gy * kGlyphSize + gx)]) continue;
      int64_t pix = (top + gy) * m.width + (left + gx);
      for (int64_t cidx = 0; cidx < m.channels; ++cidx)
        s.pixels[static_cast<size_t>((cidx * m.frames + t) * plane + pix)] =
            ch[cidx % 3];
    }
  }
}

void draw_beacon(ClipSample& s, const DatasetMeta& m, int64_t t) {
  int64_t plane = m.height * m.width;
  for (int64_t cidx = 0; cidx < m.channels; ++cidx)
    for (int64_t y = 0; y < kBeaconRows; ++y)
      std::memset(&s.pixels[static_cast<size_t>((cidx * m.frames + t) * plane + y * m.width)],
                  255, static_cast<size_t>(m.width));
}

constexpr char kMagic[8] = {'N', 'U', 'T', 'A', 'D', 'A', 'T', 'A'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require<IoError>(in.good(), "dataset: truncated file ", path);
  return v;
}

}  // namespace

const std::array<std::array<uint8_t, kGlyphSize * kGlyphSize>, 8>& glyph_masks() {
  static const auto glyphs = build_glyphs();
  return glyphs;
}

std::vector<int64_t> Dataset::informative_frames(int64_t index) const {
  require<ValueError>(index >= 0 && index < static_cast<int64_t>(samples.size()),
                      "dataset: sample index ", index, " out of range");
  std::vector<int64_t> out;
  uint32_t mask = samples[static_cast<size_t>(index)].informative_mask;
  for (int64_t t = 0; t < meta.frames; ++t)
    if (mask & (1u << t)) out.push_back(t);
  return out;
}

Dataset generate_dataset(const DatasetMeta& meta, uint64_t seed, Split split) {
  require<ValueError>(meta.classes >= 2 && meta.classes <= 8,
                      "dataset: classes must be in [2,8], got ", meta.classes);
  require<ValueError>(meta.channels == 3, "dataset: channels must be 3");
  require<ValueError>(meta.frames >= 2 && meta.frames <= 32,
                      "dataset: frames must be in [2,32]");
  require<ValueError>(meta.informative >= 1 && meta.informative < meta.frames,
                      "dataset: informative frames must be in [1, frames)");
  require<ValueError>(meta.height >= kGlyphSize + kGlyphMargin + kBeaconRows &&
                          meta.width >= kGlyphSize,
                      "dataset: frame geometry too small for the glyph atlas");

  Dataset ds;
  ds.meta = meta;
  ds.samples.resize(static_cast<size_t>(meta.num_clips));
  int64_t plane = meta.height * meta.width;
  int64_t top_floor = kBeaconRows + kGlyphMargin;  // keep clear of the beacon strip
  int64_t top_max = meta.height - kGlyphSize;
  int64_t left_max = meta.width - kGlyphSize;

  for (int64_t i = 0; i < meta.num_clips; ++i) {
    ClipSample& s = ds.samples[static_cast<size_t>(i)];
    Rng rng(mix_seed(seed, static_cast<uint64_t>(split), static_cast<uint64_t>(i)));
    s.label = i % meta.classes;  // exact class balance when clips % classes == 0
    s.pixels.assign(static_cast<size_t>(meta.channels * meta.frames * plane), 0);

    // Background noise.
    for (auto& px : s.pixels) px = static_cast<uint8_t>(rng.uniform_int(kNoiseMax));

    // Choose the informative frames.
    std::vector<int64_t> frames(static_cast<size_t>(meta.frames));
    for (int64_t t = 0; t < meta.frames; ++t) frames[static_cast<size_t>(t)] = t;
    rng.shuffle(frames);
    s.informative_mask = 0;
    for (int64_t k = 0; k < meta.informative; ++k)
      s.informative_mask |= 1u << frames[static_cast<size_t>(k)];

    for (int64_t t = 0; t < meta.frames; ++t) {
      bool informative = (s.informative_mask & (1u << t)) != 0;
      int64_t glyph;
      if (informative) {
        glyph = s.label;
      } else {
        // Any class but the label, so single frames stay ambiguous.
        glyph = rng.uniform_int(meta.classes - 1);
        if (glyph >= s.label) ++glyph;
      }
      int64_t top = top_floor + rng.uniform_int(top_max - top_floor + 1);
      int64_t left = rng.uniform_int(left_max + 1);
      Color c = kColors[rng.uniform_int(7)];
      draw_glyph(s, meta, t, top, left, glyph, c);
      if (informative) draw_beacon(s, meta, t);
    }
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  require<IoError>(out.good(), "dataset: cannot write ", path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  const DatasetMeta& m = ds.meta;
  for (int64_t v : {m.num_clips, m.classes, m.channels, m.frames, m.height, m.width,
                    m.informative})
    write_pod(out, v);
  for (const ClipSample& s : ds.samples) {
    write_pod(out, static_cast<uint8_t>(s.label));
    write_pod(out, s.informative_mask);
    out.write(reinterpret_cast<const char*>(s.pixels.data()),
              static_cast<std::streamsize>(s.pixels.size()));
  }
  require<IoError>(out.good(), "dataset: write failed for ", path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "dataset: cannot open ", path);
  char magic[8];
  in.read(magic, sizeof(magic));
  require<IoError>(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
                   "dataset: bad magic in ", path);
  uint32_t version = read_pod<uint32_t>(in, path);
  require<IoError>(version == kVersion, "dataset: unsupported version ", version, " in ",
                   path);
  Dataset ds;
  DatasetMeta& m = ds.meta;
  m.num_clips = read_pod<int64_t>(in, path);
  m.classes = read_pod<int64_t>(in, path);
  m.channels = read_pod<int64_t>(in, path);
  m.frames = read_pod<int64_t>(in, path);
  m.height = read_pod<int64_t>(in, path);
  m.width = read_pod<int64_t>(in, path);
  m.informative = read_pod<int64_t>(in, path);
  int64_t numel = m.channels * m.frames * m.height * m.width;
  ds.samples.resize(static_cast<size_t>(m.num_clips));
  for (ClipSample& s : ds.samples) {
    s.label = read_pod<uint8_t>(in, path);
    s.informative_mask = read_pod<uint32_t>(in, path);
    s.pixels.resize(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(s.pixels.data()),
            static_cast<std::streamsize>(s.pixels.size()));
    require<IoError>(in.good(), "dataset: truncated pixels in ", path);
  }
  return ds;
}

Batch make_batch(const Dataset& ds, const std::vector<int64_t>& indices,
                 const std::vector<uint8_t>& flip, const std::vector<int64_t>& time_shift) {
  const DatasetMeta& m = ds.meta;
  int64_t n = static_cast<int64_t>(indices.size());
  require<ValueError>(static_cast<int64_t>(flip.size()) == n &&
                          static_cast<int64_t>(time_shift.size()) == n,
                      "dataset: augmentation lists must match the batch size");
  int64_t plane = m.height * m.width;
  int64_t clip_elems = m.channels * m.frames * plane;

  Batch batch;
  batch.labels.resize(static_cast<size_t>(n));
  batch.informative_masks.resize(static_cast<size_t>(n));
  std::vector<double> data(static_cast<size_t>(n * clip_elems));

  for (int64_t bi = 0; bi < n; ++bi) {
    int64_t idx = indices[static_cast<size_t>(bi)];
    require<ValueError>(idx >= 0 && idx < m.num_clips, "dataset: clip index ", idx,
                        " out of range");
    const ClipSample& s = ds.samples[static_cast<size_t>(idx)];
    batch.labels[static_cast<size_t>(bi)] = s.label;
    int64_t shift = ((time_shift[static_cast<size_t>(bi)] % m.frames) + m.frames) % m.frames;
    bool mirror = flip[static_cast<size_t>(bi)] != 0;

    uint32_t mask = s.informative_mask;
    if (shift != 0) {
      uint32_t rotated = 0;
      for (int64_t t = 0; t < m.frames; ++t)
        if (mask & (1u << t)) rotated |= 1u << ((t + shift) % m.frames);
      mask = rotated;
    }
    batch.informative_masks[static_cast<size_t>(bi)] = mask;

    double* dst_clip = data.data() + bi * clip_elems;
    for (int64_t c = 0; c < m.channels; ++c) {
      for (int64_t t = 0; t < m.frames; ++t) {
        int64_t src_t = (t - shift + m.frames) % m.frames;
        const uint8_t* src = s.pixels.data() + (c * m.frames + src_t) * plane;
        double* dst = dst_clip + (c * m.frames + t) * plane;
        if (!mirror) {
          for (int64_t p = 0; p < plane; ++p) dst[p] = src[p] / 255.0;
        } else {
          for (int64_t y = 0; y < m.height; ++y)
            for (int64_t x = 0; x < m.width; ++x)
              dst[y * m.width + x] = src[y * m.width + (m.width - 1 - x)] / 255.0;
        }
      }
    }
  }
  batch.clips =
      Tensor::from_vector(Shape{n, m.channels, m.frames, m.height, m.width}, std::move(data));
  return batch;
}

Batch make_batch(const Dataset& ds, const std::vector<int64_t>& indices) {
  std::vector<uint8_t> flip(indices.size(), 0);
  std::vector<int64_t> shift(indices.size(), 0);
  return make_batch(ds, indices, flip, shift);
}

}  // namespace nuta
