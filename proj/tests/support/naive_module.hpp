#pragma once

// Primitive-by-primitive reference composition of the aggregation module:
// projection map, aggregation, and synchronisation rebuilt from the naive
// kernels with explicit index loops for the head-split products.

#include "naive_ops.hpp"

namespace naive {

struct ModuleWeights {
  std::vector<double> phi, theta, delta, zeta;  // [C, C/groups, 3, 1, 1]
  std::vector<double> compress;                 // [Cout, C, 1, 1, 1]
  int64_t channels = 0;
  int64_t heads = 1;
  int64_t conv_groups = 1;
};

// softmax over sources of the head-split query/key product:
// M[b*heads+hd, s, t], flattened rows of length T.
inline std::vector<double> projection_map(const std::vector<double>& f,
                                          const Dims5& fd, const ModuleWeights& mw) {
  Dims5 pd;
  auto pooled = temporal_maxpool2(f, fd, &pd);
  Dims5 qd, kd;
  auto q = conv3d(pooled, pd, mw.phi, mw.channels, 3, 1, 1, nullptr, {1, 1, 1},
                  {1, 0, 0}, mw.conv_groups, true, &qd);
  auto k = conv3d(f, fd, mw.theta, mw.channels, 3, 1, 1, nullptr, {1, 1, 1},
                  {1, 0, 0}, mw.conv_groups, true, &kd);
  auto gq = gamma(q, qd, mw.heads);  // [N*heads, S, d] flat
  auto gk = gamma(k, kd, mw.heads);  // [N*heads, T, d] flat
  const int64_t d = (mw.channels / mw.heads) * fd.h * fd.w;
  const int64_t s_steps = fd.t / 2, t_steps = fd.t, rows = fd.n * mw.heads;
  std::vector<double> scores(static_cast<size_t>(rows * s_steps * t_steps), 0.0);
  for (int64_t b = 0; b < rows; ++b)
    for (int64_t s = 0; s < s_steps; ++s)
      for (int64_t t = 0; t < t_steps; ++t) {
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i)
          acc += gq[static_cast<size_t>((b * s_steps + s) * d + i)] *
                 gk[static_cast<size_t>((b * t_steps + t) * d + i)];
        scores[static_cast<size_t>((b * s_steps + s) * t_steps + t)] = acc;
      }
  return softmax_rows(scores, rows * s_steps, t_steps);
}

// compress(gamma_inverse(M x gamma(value_conv(f)))) with the given value
// weights; shared by the aggregation (delta) and synchronisation (zeta) arms.
inline std::vector<double> project_values(const std::vector<double>& f,
                                          const Dims5& fd,
                                          const std::vector<double>& m,
                                          const std::vector<double>& value_w,
                                          const ModuleWeights& mw,
                                          Dims5* out_dims) {
  Dims5 vd;
  auto v = conv3d(f, fd, value_w, mw.channels, 3, 1, 1, nullptr, {1, 1, 1},
                  {1, 0, 0}, mw.conv_groups, true, &vd);
  auto gv = gamma(v, vd, mw.heads);  // [N*heads, T, d]
  const int64_t d = (mw.channels / mw.heads) * fd.h * fd.w;
  const int64_t s_steps = fd.t / 2, t_steps = fd.t, rows = fd.n * mw.heads;
  std::vector<double> mixed(static_cast<size_t>(rows * s_steps * d), 0.0);
  for (int64_t b = 0; b < rows; ++b)
    for (int64_t s = 0; s < s_steps; ++s)
      for (int64_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int64_t t = 0; t < t_steps; ++t)
          acc += m[static_cast<size_t>((b * s_steps + s) * t_steps + t)] *
                 gv[static_cast<size_t>((b * t_steps + t) * d + i)];
        mixed[static_cast<size_t>((b * s_steps + s) * d + i)] = acc;
      }
  auto folded =
      gamma_inverse(mixed, fd.n, mw.heads, s_steps, mw.channels, fd.h, fd.w);
  Dims5 md{fd.n, mw.channels, s_steps, fd.h, fd.w};
  const int64_t cout = static_cast<int64_t>(mw.compress.size()) / mw.channels;
  return conv3d(folded, md, mw.compress, cout, 1, 1, 1, nullptr, {1, 1, 1},
                {0, 0, 0}, 1, false, out_dims);
}

inline std::vector<double> aggregate(const std::vector<double>& f, const Dims5& fd,
                                     const std::vector<double>& m,
                                     const ModuleWeights& mw, Dims5* out_dims) {
  return project_values(f, fd, m, mw.delta, mw, out_dims);
}

inline std::vector<double> sync(const std::vector<double>& f_res, const Dims5& fd,
                                const std::vector<double>& m,
                                const ModuleWeights& mw, Dims5* out_dims) {
  Dims5 od;
  auto projected = project_values(f_res, fd, m, mw.zeta, mw, &od);
  Dims5 pd;
  auto pooled = temporal_maxpool2(f_res, fd, &pd);
  for (size_t i = 0; i < projected.size(); ++i) projected[i] += pooled[i];
  if (out_dims) *out_dims = od;
  return projected;
}

}  // namespace naive
