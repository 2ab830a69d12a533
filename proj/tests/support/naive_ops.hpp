#pragma once

// Reference implementations written as plain nested loops over flat vectors,
// deliberately independent of the library kernels (no shared helpers, no
// Tensor type): tests compose these and compare against the real ops.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace naive {

struct Dims5 {
  int64_t n = 1, c = 1, t = 1, h = 1, w = 1;
  int64_t numel() const { return n * c * t * h * w; }
};

inline int64_t idx5(const Dims5& d, int64_t n, int64_t c, int64_t t, int64_t h,
                    int64_t w) {
  return (((n * d.c + c) * d.t + t) * d.h + h) * d.w + w;
}

// Grouped 3D cross-correlation. Spatial padding is zero-filled; the temporal
// axis is zero-filled or edge-replicated.
inline std::vector<double> conv3d(const std::vector<double>& x, const Dims5& xd,
                                  const std::vector<double>& wgt, int64_t cout,
                                  int64_t kt, int64_t kh, int64_t kw,
                                  const std::vector<double>* bias,
                                  std::array<int64_t, 3> stride,
                                  std::array<int64_t, 3> pad, int64_t groups,
                                  bool replicate_t, Dims5* out_dims) {
  const int64_t cin_g = xd.c / groups;
  const int64_t cout_g = cout / groups;
  Dims5 od;
  od.n = xd.n;
  od.c = cout;
  od.t = (xd.t + 2 * pad[0] - kt) / stride[0] + 1;
  od.h = (xd.h + 2 * pad[1] - kh) / stride[1] + 1;
  od.w = (xd.w + 2 * pad[2] - kw) / stride[2] + 1;
  std::vector<double> y(static_cast<size_t>(od.numel()), 0.0);
  for (int64_t n = 0; n < od.n; ++n)
    for (int64_t co = 0; co < cout; ++co) {
      const int64_t g = co / cout_g;
      for (int64_t ot = 0; ot < od.t; ++ot)
        for (int64_t oh = 0; oh < od.h; ++oh)
          for (int64_t ow = 0; ow < od.w; ++ow) {
            double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
            for (int64_t cl = 0; cl < cin_g; ++cl)
              for (int64_t dt = 0; dt < kt; ++dt) {
                int64_t tt = ot * stride[0] + dt - pad[0];
                if (replicate_t) tt = std::clamp<int64_t>(tt, 0, xd.t - 1);
                if (tt < 0 || tt >= xd.t) continue;
                for (int64_t dh = 0; dh < kh; ++dh) {
                  const int64_t hh = oh * stride[1] + dh - pad[1];
                  if (hh < 0 || hh >= xd.h) continue;
                  for (int64_t dw = 0; dw < kw; ++dw) {
                    const int64_t ww = ow * stride[2] + dw - pad[2];
                    if (ww < 0 || ww >= xd.w) continue;
                    const double wv =
                        wgt[static_cast<size_t>((((co * cin_g + cl) * kt + dt) * kh + dh) * kw + dw)];
                    acc += wv * x[static_cast<size_t>(
                                    idx5(xd, n, g * cin_g + cl, tt, hh, ww))];
                  }
                }
              }
            y[static_cast<size_t>(idx5(od, n, co, ot, oh, ow))] = acc;
          }
    }
  if (out_dims) *out_dims = od;
  return y;
}

// [batch, P, K] x [batch, K, Q] -> [batch, P, Q]
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, int64_t batch,
                                  int64_t p, int64_t k, int64_t q) {
  std::vector<double> y(static_cast<size_t>(batch * p * q), 0.0);
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t i = 0; i < p; ++i)
      for (int64_t j = 0; j < q; ++j) {
        double acc = 0.0;
        for (int64_t kk = 0; kk < k; ++kk)
          acc += a[static_cast<size_t>((n * p + i) * k + kk)] *
                 b[static_cast<size_t>((n * k + kk) * q + j)];
        y[static_cast<size_t>((n * p + i) * q + j)] = acc;
      }
  return y;
}

inline std::vector<double> softmax_rows(const std::vector<double>& x, int64_t rows,
                                        int64_t cols) {
  std::vector<double> y(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* out = y.data() + r * cols;
    double mx = in[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) sum += std::exp(in[j] - mx);
    for (int64_t j = 0; j < cols; ++j) out[j] = std::exp(in[j] - mx) / sum;
  }
  return y;
}

// [N, C, T, H, W] -> [N, heads, T, (C/heads)*H*W] by definition of the
// head-splitting data movement.
inline std::vector<double> gamma(const std::vector<double>& x, const Dims5& xd,
                                 int64_t heads) {
  const int64_t cl = xd.c / heads;
  const int64_t d = cl * xd.h * xd.w;
  std::vector<double> y(x.size());
  for (int64_t n = 0; n < xd.n; ++n)
    for (int64_t hd = 0; hd < heads; ++hd)
      for (int64_t t = 0; t < xd.t; ++t)
        for (int64_t c = 0; c < cl; ++c)
          for (int64_t hh = 0; hh < xd.h; ++hh)
            for (int64_t ww = 0; ww < xd.w; ++ww)
              y[static_cast<size_t>(((n * heads + hd) * xd.t + t) * d +
                                    (c * xd.h + hh) * xd.w + ww)] =
                  x[static_cast<size_t>(idx5(xd, n, hd * cl + c, t, hh, ww))];
  return y;
}

inline std::vector<double> gamma_inverse(const std::vector<double>& g, int64_t n,
                                         int64_t heads, int64_t t, int64_t c,
                                         int64_t h, int64_t w) {
  const int64_t cl = c / heads;
  const int64_t d = cl * h * w;
  Dims5 xd{n, c, t, h, w};
  std::vector<double> y(static_cast<size_t>(xd.numel()));
  for (int64_t nn = 0; nn < n; ++nn)
    for (int64_t hd = 0; hd < heads; ++hd)
      for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t cc = 0; cc < cl; ++cc)
          for (int64_t hh = 0; hh < h; ++hh)
            for (int64_t ww = 0; ww < w; ++ww)
              y[static_cast<size_t>(idx5(xd, nn, hd * cl + cc, tt, hh, ww))] =
                  g[static_cast<size_t>(((nn * heads + hd) * t + tt) * d +
                                        (cc * h + hh) * w + ww)];
  return y;
}

inline std::vector<double> temporal_maxpool2(const std::vector<double>& x,
                                             const Dims5& xd, Dims5* out_dims) {
  Dims5 od = xd;
  od.t = xd.t / 2;
  std::vector<double> y(static_cast<size_t>(od.numel()));
  for (int64_t n = 0; n < xd.n; ++n)
    for (int64_t c = 0; c < xd.c; ++c)
      for (int64_t t = 0; t < od.t; ++t)
        for (int64_t h = 0; h < xd.h; ++h)
          for (int64_t w = 0; w < xd.w; ++w)
            y[static_cast<size_t>(idx5(od, n, c, t, h, w))] =
                std::max(x[static_cast<size_t>(idx5(xd, n, c, 2 * t, h, w))],
                         x[static_cast<size_t>(idx5(xd, n, c, 2 * t + 1, h, w))]);
  if (out_dims) *out_dims = od;
  return y;
}

// Per-channel batch normalisation with biased variance, training statistics.
inline std::vector<double> batchnorm_train(const std::vector<double>& x,
                                           const Dims5& xd,
                                           const std::vector<double>& scale,
                                           const std::vector<double>& shift,
                                           double epsilon,
                                           std::vector<double>* mean_out = nullptr,
                                           std::vector<double>* var_out = nullptr) {
  const int64_t per = xd.n * xd.t * xd.h * xd.w;
  std::vector<double> y(x.size());
  std::vector<double> means(static_cast<size_t>(xd.c)), vars(static_cast<size_t>(xd.c));
  for (int64_t c = 0; c < xd.c; ++c) {
    double m = 0.0;
    for (int64_t n = 0; n < xd.n; ++n)
      for (int64_t t = 0; t < xd.t; ++t)
        for (int64_t h = 0; h < xd.h; ++h)
          for (int64_t w = 0; w < xd.w; ++w)
            m += x[static_cast<size_t>(idx5(xd, n, c, t, h, w))];
    m /= static_cast<double>(per);
    double v = 0.0;
    for (int64_t n = 0; n < xd.n; ++n)
      for (int64_t t = 0; t < xd.t; ++t)
        for (int64_t h = 0; h < xd.h; ++h)
          for (int64_t w = 0; w < xd.w; ++w) {
            double dlt = x[static_cast<size_t>(idx5(xd, n, c, t, h, w))] - m;
            v += dlt * dlt;
          }
    v /= static_cast<double>(per);
    means[static_cast<size_t>(c)] = m;
    vars[static_cast<size_t>(c)] = v;
    const double inv = 1.0 / std::sqrt(v + epsilon);
    for (int64_t n = 0; n < xd.n; ++n)
      for (int64_t t = 0; t < xd.t; ++t)
        for (int64_t h = 0; h < xd.h; ++h)
          for (int64_t w = 0; w < xd.w; ++w) {
            auto i = static_cast<size_t>(idx5(xd, n, c, t, h, w));
            y[i] = scale[static_cast<size_t>(c)] * (x[i] - m) * inv +
                   shift[static_cast<size_t>(c)];
          }
  }
  if (mean_out) *mean_out = means;
  if (var_out) *var_out = vars;
  return y;
}

inline std::vector<double> linear(const std::vector<double>& x, int64_t n, int64_t k,
                                  const std::vector<double>& wgt, int64_t m,
                                  const std::vector<double>* bias) {
  std::vector<double> y(static_cast<size_t>(n * m), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double acc = bias ? (*bias)[static_cast<size_t>(j)] : 0.0;
      for (int64_t kk = 0; kk < k; ++kk)
        acc += x[static_cast<size_t>(i * k + kk)] * wgt[static_cast<size_t>(j * k + kk)];
      y[static_cast<size_t>(i * m + j)] = acc;
    }
  return y;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = a.size() == b.size() ? 0.0
                                      : std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < a.size() && i < b.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace naive
