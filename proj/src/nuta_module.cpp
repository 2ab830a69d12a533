#include "nuta/nuta_module.hpp"

#include "nuta/error.hpp"
#include "nuta/ops.hpp"

namespace nuta {

namespace {
void check_feature(const Tensor& f, const char* op) {
  require<ValueError>(f.defined(), op, ": undefined feature tensor");
  require(f.shape().rank() == 5, op, ": feature must be [N,C,T,H,W], got ",
          f.shape().str());
}

void check_map(const Tensor& f, const ProjectionMap& m, const char* op) {
  require<ValueError>(m.values.defined(), op, ": undefined projection map");
  const Shape& s = m.values.shape();
  require(s.rank() == 4, op, ": map must be [N,heads,S,T], got ", s.str());
  require(s[0] == f.shape()[0], op, ": map batch ", s[0], " != feature batch ",
          f.shape()[0]);
  require(s[3] == f.shape()[2], op, ": map source steps ", s[3],
          " != feature frames ", f.shape()[2]);
}
}  // namespace

NutaModuleParams NutaModuleParams::make(int64_t channels, int64_t heads,
                                        int64_t conv_groups, Rng& rng) {
  require(channels >= 1 && heads >= 1 && conv_groups >= 1,
          "nuta module: channels, heads and groups must be >= 1");
  require(channels % heads == 0, "nuta module: channels ", channels,
          " not divisible by heads ", heads);
  require(channels % conv_groups == 0, "nuta module: channels ", channels,
          " not divisible by conv groups ", conv_groups);
  NutaModuleParams p;
  auto temporal = [&](Rng& r) {
    return Conv3dParams::make(channels, channels, {3, 1, 1}, {1, 1, 1}, {1, 0, 0},
                              conv_groups, /*with_bias=*/false, TemporalPad::replicate, r);
  };
  p.phi = temporal(rng);
  p.theta = temporal(rng);
  p.delta = temporal(rng);
  p.zeta = temporal(rng);
  p.compress = Conv3dParams::make(channels, channels, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                  /*with_bias=*/false, TemporalPad::zero, rng);
  p.layout = HeadLayout{heads};
  return p;
}

Tensor gamma(const Tensor& x, const HeadLayout& layout) {
  check_feature(x, "gamma");
  const Shape& s = x.shape();
  int64_t n = layout.heads;
  require(n >= 1 && s[1] % n == 0, "gamma: channels ", s[1], " not divisible by heads ", n);
  int64_t N = s[0], C = s[1], T = s[2], H = s[3], W = s[4];
  int64_t cph = C / n;
  Tensor split = reshape(x, Shape{N, n, cph, T, H, W});
  Tensor moved = permute(split, {0, 1, 3, 2, 4, 5});  // [N, n, T, C/n, H, W]
  return reshape(moved, Shape{N, n, T, cph * H * W});
}

Tensor gamma_inverse(const Tensor& g, int64_t channels, int64_t height, int64_t width) {
  require<ValueError>(g.defined(), "gamma_inverse: undefined input");
  const Shape& s = g.shape();
  require(s.rank() == 4, "gamma_inverse: input must be [N,heads,T,d], got ", s.str());
  int64_t N = s[0], n = s[1], T = s[2], d = s[3];
  require(channels % n == 0, "gamma_inverse: channels ", channels,
          " not divisible by heads ", n);
  int64_t cph = channels / n;
  require(d == cph * height * width, "gamma_inverse: flat extent ", d,
          " != (C/heads)*H*W = ", cph * height * width);
  Tensor blocks = reshape(g, Shape{N, n, T, cph, height, width});
  Tensor moved = permute(blocks, {0, 1, 3, 2, 4, 5});  // [N, n, C/n, T, H, W]
  return reshape(moved, Shape{N, n * cph, T, height, width});
}

ProjectionMap projection_map(const Tensor& f, const NutaModuleParams& p) {
  check_feature(f, "projection_map");
  const Shape& s = f.shape();
  require(s[2] % 2 == 0, "projection_map: frames must be even, got ", s[2]);

  Tensor pooled = temporal_maxpool2(f);
  Tensor query = gamma(conv3d(pooled, p.phi), p.layout);   // [N, n, T/2, d]
  Tensor key = gamma(conv3d(f, p.theta), p.layout);        // [N, n, T, d]
  Tensor logits = matmul(query, transpose_last2(key));     // [N, n, T/2, T]
  return ProjectionMap{softmax_lastdim(logits)};
}

Tensor nuta_aggregate(const Tensor& f, const ProjectionMap& m, const NutaModuleParams& p) {
  check_feature(f, "nuta_aggregate");
  check_map(f, m, "nuta_aggregate");
  const Shape& s = f.shape();
  Tensor value = gamma(conv3d(f, p.delta), p.layout);      // [N, n, T, d]
  Tensor mixed = matmul(m.values, value);                  // [N, n, S, d]
  Tensor dense = gamma_inverse(mixed, s[1], s[3], s[4]);   // [N, C, S, H, W]
  return conv3d(dense, p.compress);
}

std::pair<Tensor, ProjectionMap> nuta_forward(const Tensor& f, const NutaModuleParams& p) {
  ProjectionMap m = projection_map(f, p);
  return {nuta_aggregate(f, m, p), m};
}

Tensor temporal_sync(const Tensor& f_res, const ProjectionMap& m,
                     const NutaModuleParams& p) {
  check_feature(f_res, "temporal_sync");
  check_map(f_res, m, "temporal_sync");
  const Shape& s = f_res.shape();
  require(s[2] % 2 == 0, "temporal_sync: frames must be even, got ", s[2]);
  require(p.compress.weight.shape()[0] == s[1],
          "temporal_sync: compress output channels ", p.compress.weight.shape()[0],
          " != residual channels ", s[1], " (the shared compress assumes them equal)");

  Tensor value = gamma(conv3d(f_res, p.zeta), p.layout);   // [N, n, T, d]
  Tensor mixed = matmul(m.values, value);                  // [N, n, S, d]
  Tensor dense = gamma_inverse(mixed, s[1], s[3], s[4]);   // [N, C, S, H, W]
  Tensor projected = conv3d(dense, p.compress);
  return add(projected, temporal_maxpool2(f_res));
}

}  // namespace nuta
