#include "nuta/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "nuta/error.hpp"
#include "nuta/mac_counter.hpp"
#include "nuta/ops.hpp"
#include "nuta/parallel.hpp"

namespace nuta {

namespace {

struct ConvDims {
  int64_t N, Cin, T, H, W;
  int64_t Cout, Cpg, kT, kH, kW;  // Cpg = Cin / groups
  int64_t sT, sH, sW, pT, pH, pW;
  int64_t groups;
  int64_t To, Ho, Wo;        // output extents
  int64_t Tp, Hp, Wp;        // padded input extents
  TemporalPad tpad;
};

ConvDims resolve_dims(const Tensor& x, const Conv3dParams& p) {
  require<ValueError>(x.defined() && p.weight.defined(), "conv3d: undefined tensor");
  const Shape& sx = x.shape();
  const Shape& sw = p.weight.shape();
  require(sx.rank() == 5, "conv3d: input must be [N,C,T,H,W], got ", sx.str());
  require(sw.rank() == 5, "conv3d: weight must be [Cout,Cin/g,kT,kH,kW], got ", sw.str());

  ConvDims d;
  d.N = sx[0]; d.Cin = sx[1]; d.T = sx[2]; d.H = sx[3]; d.W = sx[4];
  d.Cout = sw[0]; d.Cpg = sw[1]; d.kT = sw[2]; d.kH = sw[3]; d.kW = sw[4];
  d.groups = p.groups;
  require(d.groups >= 1, "conv3d: groups must be >= 1");
  require(d.Cin == d.Cpg * d.groups, "conv3d: input channels ", d.Cin,
          " != weight channels-per-group ", d.Cpg, " x groups ", d.groups);
  require(d.Cout % d.groups == 0, "conv3d: out channels ", d.Cout,
          " not divisible by groups ", d.groups);
  if (p.bias.defined())
    require(p.bias.shape() == Shape{d.Cout}, "conv3d: bias shape ", p.bias.shape().str(),
            " != [", d.Cout, "]");

  d.sT = p.stride[0]; d.sH = p.stride[1]; d.sW = p.stride[2];
  d.pT = p.padding[0]; d.pH = p.padding[1]; d.pW = p.padding[2];
  require(d.sT >= 1 && d.sH >= 1 && d.sW >= 1, "conv3d: strides must be >= 1");
  require(d.pT >= 0 && d.pH >= 0 && d.pW >= 0, "conv3d: padding must be >= 0");
  const int64_t ks[3] = {d.kT, d.kH, d.kW};
  const int64_t ps[3] = {d.pT, d.pH, d.pW};
  for (int i = 0; i < 3; ++i)
    require(ps[i] == 0 || ks[i] % 2 == 1,
            "conv3d: padded kernel extents must be odd, got kernel ", ks[i], " with pad ",
            ps[i]);
  d.tpad = p.temporal_pad;

  d.Tp = d.T + 2 * d.pT; d.Hp = d.H + 2 * d.pH; d.Wp = d.W + 2 * d.pW;
  d.To = (d.Tp - d.kT) / d.sT + 1;
  d.Ho = (d.Hp - d.kH) / d.sH + 1;
  d.Wo = (d.Wp - d.kW) / d.sW + 1;
  require(d.Tp >= d.kT && d.Hp >= d.kH && d.Wp >= d.kW,
          "conv3d: kernel larger than padded input, input ", sx.str(), " weight ",
          sw.str());
  return d;
}

// Materialises the padded input. Spatial borders are zero; temporal borders
// are zero or edge-replicated per mode. Working on a padded copy keeps the
// accumulation loops branch-free and makes the executed multiply count equal
// the analytic out_elems * (Cin/g) * kT*kH*kW product.
std::vector<double> pad_input(const double* x, const ConvDims& d) {
  std::vector<double> xp(static_cast<size_t>(d.N * d.Cin * d.Tp * d.Hp * d.Wp), 0.0);
  int64_t in_plane = d.H * d.W;
  int64_t pad_plane = d.Hp * d.Wp;
  for (int64_t n = 0; n < d.N; ++n) {
    for (int64_t c = 0; c < d.Cin; ++c) {
      const double* src_base = x + ((n * d.Cin + c) * d.T) * in_plane;
      double* dst_base = xp.data() + ((n * d.Cin + c) * d.Tp) * pad_plane;
      for (int64_t tp = 0; tp < d.Tp; ++tp) {
        int64_t t = tp - d.pT;
        if (t < 0 || t >= d.T) {
          if (d.tpad == TemporalPad::zero) continue;
          t = std::clamp<int64_t>(t, 0, d.T - 1);
        }
        const double* src = src_base + t * in_plane;
        double* dst = dst_base + tp * pad_plane + d.pH * d.Wp + d.pW;
        for (int64_t h = 0; h < d.H; ++h)
          std::memcpy(dst + h * d.Wp, src + h * d.W,
                      static_cast<size_t>(d.W) * sizeof(double));
      }
    }
  }
  return xp;
}

// Folds a padded-input gradient back onto the true input extents, honouring
// the temporal pad mode (replicated borders accumulate into the edge frames;
// zero borders are dropped, as are all spatial borders).
void fold_padded_grad(const std::vector<double>& gxp, double* gx, const ConvDims& d) {
  int64_t in_plane = d.H * d.W;
  int64_t pad_plane = d.Hp * d.Wp;
  for (int64_t n = 0; n < d.N; ++n) {
    for (int64_t c = 0; c < d.Cin; ++c) {
      const double* src_base = gxp.data() + ((n * d.Cin + c) * d.Tp) * pad_plane;
      double* dst_base = gx + ((n * d.Cin + c) * d.T) * in_plane;
      for (int64_t tp = 0; tp < d.Tp; ++tp) {
        int64_t t = tp - d.pT;
        if (t < 0 || t >= d.T) {
          if (d.tpad == TemporalPad::zero) continue;
          t = std::clamp<int64_t>(t, 0, d.T - 1);
        }
        const double* src = src_base + tp * pad_plane + d.pH * d.Wp + d.pW;
        double* dst = dst_base + t * in_plane;
        for (int64_t h = 0; h < d.H; ++h) {
          const double* srow = src + h * d.Wp;
          double* drow = dst + h * d.W;
          for (int64_t w = 0; w < d.W; ++w) drow[w] += srow[w];
        }
      }
    }
  }
}

template <bool COUNT>
void conv_forward_one(const std::vector<double>& xp, const double* weight,
                      const double* bias, double* out, const ConvDims& d, int64_t n,
                      int64_t co) {
  uint64_t counted = 0;
  int64_t cout_pg = d.Cout / d.groups;
  int64_t g = co / cout_pg;
  int64_t pad_plane = d.Hp * d.Wp;
  int64_t out_plane = d.Ho * d.Wo;
  double* obase = out + ((n * d.Cout + co) * d.To) * out_plane;
  double b = bias ? bias[co] : 0.0;
  for (int64_t i = 0, e = d.To * out_plane; i < e; ++i) obase[i] = b;

  for (int64_t cig = 0; cig < d.Cpg; ++cig) {
    int64_t ci = g * d.Cpg + cig;
    const double* xbase = xp.data() + ((n * d.Cin + ci) * d.Tp) * pad_plane;
    const double* wbase =
        weight + (((co * d.Cpg + cig) * d.kT) * d.kH) * d.kW;
    for (int64_t kt = 0; kt < d.kT; ++kt) {
      for (int64_t kh = 0; kh < d.kH; ++kh) {
        for (int64_t kw = 0; kw < d.kW; ++kw) {
          double wv = wbase[(kt * d.kH + kh) * d.kW + kw];
          for (int64_t to = 0; to < d.To; ++to) {
            const double* xt = xbase + (to * d.sT + kt) * pad_plane;
            double* ot = obase + to * out_plane;
            for (int64_t ho = 0; ho < d.Ho; ++ho) {
              const double* xr = xt + (ho * d.sH + kh) * d.Wp + kw;
              double* orow = ot + ho * d.Wo;
              if (d.sW == 1) {
                for (int64_t wo = 0; wo < d.Wo; ++wo) {
                  orow[wo] += wv * xr[wo];
                  if constexpr (COUNT) ++counted;
                }
              } else {
                for (int64_t wo = 0; wo < d.Wo; ++wo) {
                  orow[wo] += wv * xr[wo * d.sW];
                  if constexpr (COUNT) ++counted;
                }
              }
            }
          }
        }
      }
    }
  }
  if constexpr (COUNT) macs::add(counted);
}

}  // namespace

Conv3dParams Conv3dParams::make(int64_t in_channels, int64_t out_channels,
                                std::array<int64_t, 3> kernel, std::array<int64_t, 3> stride,
                                std::array<int64_t, 3> padding, int64_t groups,
                                bool with_bias, TemporalPad temporal_pad, Rng& rng) {
  require<ValueError>(groups >= 1, "conv3d: groups must be positive, got ", groups);
  require<ValueError>(in_channels % groups == 0, "conv3d: in channels ", in_channels,
                      " not divisible by groups ", groups);
  require<ValueError>(out_channels % groups == 0, "conv3d: out channels ", out_channels,
                      " not divisible by groups ", groups);
  Conv3dParams p;
  int64_t cpg = in_channels / groups;
  double fan_in = static_cast<double>(cpg * kernel[0] * kernel[1] * kernel[2]);
  p.weight = Tensor::randn(Shape{out_channels, cpg, kernel[0], kernel[1], kernel[2]}, rng,
                           std::sqrt(2.0 / fan_in), true);
  if (with_bias) p.bias = Tensor::zeros(Shape{out_channels}, true);
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  p.temporal_pad = temporal_pad;
  return p;
}

Tensor conv3d(const Tensor& x, const Conv3dParams& p) {
  ConvDims d = resolve_dims(x, p);
  auto xp = std::make_shared<std::vector<double>>(pad_input(x.data().data(), d));
  const double* weight = p.weight.data().data();
  const double* bias = p.bias.defined() ? p.bias.data().data() : nullptr;

  std::vector<double> out(static_cast<size_t>(d.N * d.Cout * d.To * d.Ho * d.Wo));
  if (macs::enabled()) {
    for (int64_t i = 0; i < d.N * d.Cout; ++i)
      conv_forward_one<true>(*xp, weight, bias, out.data(), d, i / d.Cout, i % d.Cout);
  } else {
    parallel_for(0, d.N * d.Cout, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i)
        conv_forward_one<false>(*xp, weight, bias, out.data(), d, i / d.Cout, i % d.Cout);
    });
  }

  bool rec = Tape::active().recording() &&
             (x.requires_grad() || p.weight.requires_grad() ||
              (p.bias.defined() && p.bias.requires_grad()));
  if (finite_checks()) check_finite(out, "conv3d output");
  Tensor result =
      Tensor::from_vector(Shape{d.N, d.Cout, d.To, d.Ho, d.Wo}, std::move(out), rec);
  if (!rec) return result;

  std::vector<std::shared_ptr<TensorImpl>> ins{x.impl(), p.weight.impl()};
  if (p.bias.defined()) ins.push_back(p.bias.impl());
  Tape::active().record(
      {ins,
       result.impl(),
       [xi = x.impl(), wi = p.weight.impl(),
        bi = p.bias.defined() ? p.bias.impl() : nullptr, oi = result.impl(), d,
        xp](BackwardPass& bp) {
         const std::vector<double>& go = *bp.find(oi.get());
         int64_t cout_pg = d.Cout / d.groups;
         int64_t pad_plane = d.Hp * d.Wp;
         int64_t out_plane = d.Ho * d.Wo;
         const double* weight = wi->data.data();

         // Skipped for detached leaves (e.g. the input clip batch): nothing
         // upstream would consume the scratch gradient.
         if (xi->requires_grad) {
           // Scatter into padded-extent gradient, then fold the borders.
           std::vector<double> gxp(xp->size(), 0.0);
           parallel_for(0, d.N, [&](int64_t nlo, int64_t nhi) {
             for (int64_t n = nlo; n < nhi; ++n) {
               for (int64_t co = 0; co < d.Cout; ++co) {
                 int64_t g = co / cout_pg;
                 const double* gbase = go.data() + ((n * d.Cout + co) * d.To) * out_plane;
                 for (int64_t cig = 0; cig < d.Cpg; ++cig) {
                   int64_t ci = g * d.Cpg + cig;
                   double* gx_base = gxp.data() + ((n * d.Cin + ci) * d.Tp) * pad_plane;
                   const double* wbase = weight + (((co * d.Cpg + cig) * d.kT) * d.kH) * d.kW;
                   for (int64_t kt = 0; kt < d.kT; ++kt)
                     for (int64_t kh = 0; kh < d.kH; ++kh)
                       for (int64_t kw = 0; kw < d.kW; ++kw) {
                         double wv = wbase[(kt * d.kH + kh) * d.kW + kw];
                         for (int64_t to = 0; to < d.To; ++to) {
                           double* xt = gx_base + (to * d.sT + kt) * pad_plane;
                           const double* gt = gbase + to * out_plane;
                           for (int64_t ho = 0; ho < d.Ho; ++ho) {
                             double* xr = xt + (ho * d.sH + kh) * d.Wp + kw;
                             const double* grow = gt + ho * d.Wo;
                             for (int64_t wo = 0; wo < d.Wo; ++wo)
                               xr[wo * d.sW] += wv * grow[wo];
                           }
                         }
                       }
                 }
               }
             }
           });
           fold_padded_grad(gxp, bp.buf(xi.get()).data(), d);
         }

         {
           std::vector<double>& gw = bp.buf(wi.get());
           parallel_for(0, d.Cout, [&](int64_t clo, int64_t chi) {
             for (int64_t co = clo; co < chi; ++co) {
               int64_t g = co / cout_pg;
               for (int64_t cig = 0; cig < d.Cpg; ++cig) {
                 int64_t ci = g * d.Cpg + cig;
                 double* gwbase = gw.data() + (((co * d.Cpg + cig) * d.kT) * d.kH) * d.kW;
                 for (int64_t kt = 0; kt < d.kT; ++kt)
                   for (int64_t kh = 0; kh < d.kH; ++kh)
                     for (int64_t kw = 0; kw < d.kW; ++kw) {
                       double acc = 0.0;
                       for (int64_t n = 0; n < d.N; ++n) {
                         const double* xbase =
                             xp->data() + ((n * d.Cin + ci) * d.Tp) * pad_plane;
                         const double* gbase =
                             go.data() + ((n * d.Cout + co) * d.To) * out_plane;
                         for (int64_t to = 0; to < d.To; ++to) {
                           const double* xt = xbase + (to * d.sT + kt) * pad_plane;
                           const double* gt = gbase + to * out_plane;
                           for (int64_t ho = 0; ho < d.Ho; ++ho) {
                             const double* xr = xt + (ho * d.sH + kh) * d.Wp + kw;
                             const double* grow = gt + ho * d.Wo;
                             for (int64_t wo = 0; wo < d.Wo; ++wo)
                               acc += xr[wo * d.sW] * grow[wo];
                           }
                         }
                       }
                       gwbase[(kt * d.kH + kh) * d.kW + kw] += acc;
                     }
               }
             }
           });
         }

         if (bi) {
           std::vector<double>& gb = bp.buf(bi.get());
           for (int64_t n = 0; n < d.N; ++n)
             for (int64_t co = 0; co < d.Cout; ++co) {
               const double* gbase = go.data() + ((n * d.Cout + co) * d.To) * out_plane;
               double acc = 0.0;
               for (int64_t i = 0, e = d.To * out_plane; i < e; ++i) acc += gbase[i];
               gb[static_cast<size_t>(co)] += acc;
             }
         }
       }});
  return result;
}

Tensor temporal_maxpool2(const Tensor& x) {
  require<ValueError>(x.defined(), "temporal_maxpool2: undefined input");
  const Shape& s = x.shape();
  require(s.rank() == 5, "temporal_maxpool2: input must be [N,C,T,H,W], got ", s.str());
  int64_t N = s[0], C = s[1], T = s[2], H = s[3], W = s[4];
  require(T % 2 == 0, "temporal_maxpool2: T must be even, got ", T);
  int64_t To = T / 2;
  int64_t plane = H * W;

  std::vector<double> out(static_cast<size_t>(N * C * To * plane));
  auto pick = std::make_shared<std::vector<uint8_t>>(out.size());
  const double* px = x.data().data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* base = px + nc * T * plane;
    double* obase = out.data() + nc * To * plane;
    uint8_t* pbase = pick->data() + nc * To * plane;
    for (int64_t to = 0; to < To; ++to) {
      const double* a = base + (2 * to) * plane;
      const double* b = a + plane;
      double* orow = obase + to * plane;
      uint8_t* prow = pbase + to * plane;
      for (int64_t i = 0; i < plane; ++i) {
        // Ties keep the earlier frame so the gradient route is unambiguous.
        bool second = b[i] > a[i];
        orow[i] = second ? b[i] : a[i];
        prow[i] = second ? 1 : 0;
      }
    }
  }

  bool tracked = Tape::active().recording() && x.requires_grad();
  if (finite_checks()) check_finite(out, "temporal_maxpool2 output");
  Tensor result = Tensor::from_vector(Shape{N, C, To, H, W}, std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{x.impl()},
         result.impl(),
         [xi = x.impl(), oi = result.impl(), pick, N, C, To, plane](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& gx = bp.buf(xi.get());
           for (int64_t nc = 0; nc < N * C; ++nc) {
             const double* grow = go.data() + nc * To * plane;
             const uint8_t* prow = pick->data() + nc * To * plane;
             double* gbase = gx.data() + nc * (2 * To) * plane;
             for (int64_t to = 0; to < To; ++to)
               for (int64_t i = 0; i < plane; ++i) {
                 int64_t off = (2 * to + prow[to * plane + i]) * plane + i;
                 gbase[off] += grow[to * plane + i];
               }
           }
         }});
  }
  return result;
}

Tensor spatial_pool_to(const Tensor& x, int64_t out_h, int64_t out_w) {
  require<ValueError>(x.defined(), "spatial_pool_to: undefined input");
  const Shape& s = x.shape();
  require(s.rank() == 5, "spatial_pool_to: input must be [N,C,T,H,W], got ", s.str());
  int64_t N = s[0], C = s[1], T = s[2], H = s[3], W = s[4];
  require(out_h >= 1 && out_w >= 1 && H % out_h == 0 && W % out_w == 0,
          "spatial_pool_to: target ", out_h, "x", out_w, " must divide ", H, "x", W);
  int64_t fh = H / out_h, fw = W / out_w;
  double inv = 1.0 / static_cast<double>(fh * fw);

  std::vector<double> out(static_cast<size_t>(N * C * T * out_h * out_w));
  const double* px = x.data().data();
  for (int64_t nct = 0; nct < N * C * T; ++nct) {
    const double* base = px + nct * H * W;
    double* obase = out.data() + nct * out_h * out_w;
    for (int64_t ho = 0; ho < out_h; ++ho)
      for (int64_t wo = 0; wo < out_w; ++wo) {
        double acc = 0.0;
        for (int64_t dh = 0; dh < fh; ++dh) {
          const double* row = base + (ho * fh + dh) * W + wo * fw;
          for (int64_t dw = 0; dw < fw; ++dw) acc += row[dw];
        }
        obase[ho * out_w + wo] = acc * inv;
      }
  }
  if (macs::enabled()) macs::add(static_cast<uint64_t>(N * C * T * out_h * out_w));

  bool tracked = Tape::active().recording() && x.requires_grad();
  if (finite_checks()) check_finite(out, "spatial_pool_to output");
  Tensor result = Tensor::from_vector(Shape{N, C, T, out_h, out_w}, std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{x.impl()},
         result.impl(),
         [xi = x.impl(), oi = result.impl(), N, C, T, out_h, out_w, fh, fw, W,
          inv](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& gx = bp.buf(xi.get());
           for (int64_t nct = 0; nct < N * C * T; ++nct) {
             const double* grow = go.data() + nct * out_h * out_w;
             double* gbase = gx.data() + nct * (out_h * fh) * W;
             for (int64_t ho = 0; ho < out_h; ++ho)
               for (int64_t wo = 0; wo < out_w; ++wo) {
                 double g = grow[ho * out_w + wo] * inv;
                 for (int64_t dh = 0; dh < fh; ++dh) {
                   double* row = gbase + (ho * fh + dh) * W + wo * fw;
                   for (int64_t dw = 0; dw < fw; ++dw) row[dw] += g;
                 }
               }
           }
         }});
  }
  return result;
}

Tensor spatial_avgpool2(const Tensor& x) {
  require<ValueError>(x.defined(), "spatial_avgpool2: undefined input");
  const Shape& s = x.shape();
  require(s.rank() == 5, "spatial_avgpool2: input must be [N,C,T,H,W], got ", s.str());
  require(s[3] % 2 == 0 && s[4] % 2 == 0, "spatial_avgpool2: H and W must be even, got ",
          s.str());
  return spatial_pool_to(x, s[3] / 2, s[4] / 2);
}

Tensor global_avgpool(const Tensor& x) {
  require<ValueError>(x.defined(), "global_avgpool: undefined input");
  require(x.shape().rank() == 5, "global_avgpool: input must be [N,C,T,H,W], got ",
          x.shape().str());
  return mean_lastdims(x, 3);
}

BatchNormParams BatchNormParams::make(int64_t channels) {
  BatchNormParams p;
  p.scale = Tensor::full(Shape{channels}, 1.0, true);
  p.shift = Tensor::zeros(Shape{channels}, true);
  p.running_mean = Tensor::zeros(Shape{channels}, false);
  p.running_var = Tensor::full(Shape{channels}, 1.0, false);
  return p;
}

Tensor batchnorm3d(const Tensor& x, BatchNormParams& p, bool train_mode) {
  require<ValueError>(x.defined(), "batchnorm3d: undefined input");
  const Shape& s = x.shape();
  require(s.rank() == 5, "batchnorm3d: input must be [N,C,T,H,W], got ", s.str());
  int64_t N = s[0], C = s[1];
  int64_t inner = s[2] * s[3] * s[4];
  require(p.scale.shape() == Shape{C}, "batchnorm3d: scale shape ", p.scale.shape().str(),
          " != [", C, "]");
  int64_t m = N * inner;  // elements per channel

  const double* px = x.data().data();
  const double* gamma = p.scale.data().data();
  const double* beta = p.shift.data().data();
  std::vector<double> out(static_cast<size_t>(s.numel()));

  auto channel_base = [&](const double* base, int64_t n, int64_t c) {
    return base + (n * C + c) * inner;
  };

  if (!train_mode) {
    // Folded affine from running stats: y = a * x + b, one MAC per element.
    const double* rm = p.running_mean.data().data();
    const double* rv = p.running_var.data().data();
    for (int64_t c = 0; c < C; ++c) {
      double invstd = 1.0 / std::sqrt(rv[c] + p.epsilon);
      double a = gamma[c] * invstd;
      double b = beta[c] - a * rm[c];
      for (int64_t n = 0; n < N; ++n) {
        const double* src = channel_base(px, n, c);
        double* dst = out.data() + (n * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] = a * src[i] + b;
      }
    }
    if (macs::enabled()) macs::add(static_cast<uint64_t>(s.numel()));

    bool tracked = Tape::active().recording() &&
                   (x.requires_grad() || p.scale.requires_grad() || p.shift.requires_grad());
    if (finite_checks()) check_finite(out, "batchnorm3d output");
    Tensor result = Tensor::from_vector(s, std::move(out), tracked);
    if (tracked) {
      Tape::active().record(
          {{x.impl(), p.scale.impl(), p.shift.impl()},
           result.impl(),
           [xi = x.impl(), gi = p.scale.impl(), bi = p.shift.impl(), oi = result.impl(),
            rmi = p.running_mean.impl(), rvi = p.running_var.impl(), N, C, inner,
            eps = p.epsilon](BackwardPass& bp) {
             const std::vector<double>& go = *bp.find(oi.get());
             std::vector<double>& gx = bp.buf(xi.get());
             std::vector<double>& gg = bp.buf(gi.get());
             std::vector<double>& gb = bp.buf(bi.get());
             for (int64_t c = 0; c < C; ++c) {
               double invstd = 1.0 / std::sqrt(rvi->data[c] + eps);
               double a = gi->data[c] * invstd;
               double mean = rmi->data[c];
               double dg = 0.0, db = 0.0;
               for (int64_t n = 0; n < N; ++n) {
                 const double* g = go.data() + (n * C + c) * inner;
                 const double* xv = xi->data.data() + (n * C + c) * inner;
                 double* dxv = gx.data() + (n * C + c) * inner;
                 for (int64_t i = 0; i < inner; ++i) {
                   dxv[i] += g[i] * a;
                   dg += g[i] * (xv[i] - mean) * invstd;
                   db += g[i];
                 }
               }
               gg[c] += dg;
               gb[c] += db;
             }
           }});
    }
    return result;
  }

  // Train mode: batch statistics (biased variance) per channel.
  std::vector<double> mean(static_cast<size_t>(C), 0.0);
  std::vector<double> var(static_cast<size_t>(C), 0.0);
  for (int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const double* src = channel_base(px, n, c);
      for (int64_t i = 0; i < inner; ++i) acc += src[i];
    }
    mean[c] = acc / static_cast<double>(m);
    double vacc = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const double* src = channel_base(px, n, c);
      for (int64_t i = 0; i < inner; ++i) {
        double dv = src[i] - mean[c];
        vacc += dv * dv;
      }
    }
    var[c] = vacc / static_cast<double>(m);
  }

  auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) (*invstd)[c] = 1.0 / std::sqrt(var[c] + p.epsilon);

  for (int64_t c = 0; c < C; ++c) {
    double a = gamma[c] * (*invstd)[c];
    double b = beta[c] - a * mean[c];
    for (int64_t n = 0; n < N; ++n) {
      const double* src = channel_base(px, n, c);
      double* dst = out.data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] = a * src[i] + b;
    }
  }
  // Modeled cost for train-mode normalisation: 2 MACs per element.
  if (macs::enabled()) macs::add(2 * static_cast<uint64_t>(s.numel()));

  {
    // Running-stat update is a buffer mutation, outside the tape.
    std::vector<double> rm(p.running_mean.data().begin(), p.running_mean.data().end());
    std::vector<double> rv(p.running_var.data().begin(), p.running_var.data().end());
    for (int64_t c = 0; c < C; ++c) {
      rm[c] = (1.0 - p.momentum) * rm[c] + p.momentum * mean[c];
      rv[c] = (1.0 - p.momentum) * rv[c] + p.momentum * var[c];
    }
    p.running_mean.overwrite_data(rm);
    p.running_var.overwrite_data(rv);
  }

  bool tracked = Tape::active().recording() &&
                 (x.requires_grad() || p.scale.requires_grad() || p.shift.requires_grad());
  if (finite_checks()) check_finite(out, "batchnorm3d output");
  Tensor result = Tensor::from_vector(s, std::move(out), tracked);
  if (tracked) {
    auto mean_sp = std::make_shared<std::vector<double>>(std::move(mean));
    Tape::active().record(
        {{x.impl(), p.scale.impl(), p.shift.impl()},
         result.impl(),
         [xi = x.impl(), gi = p.scale.impl(), bi = p.shift.impl(), oi = result.impl(),
          mean_sp, invstd, N, C, inner, m](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& gx = bp.buf(xi.get());
           std::vector<double>& gg = bp.buf(gi.get());
           std::vector<double>& gb = bp.buf(bi.get());
           double invm = 1.0 / static_cast<double>(m);
           for (int64_t c = 0; c < C; ++c) {
             double mu = (*mean_sp)[c];
             double is = (*invstd)[c];
             double gamma_c = gi->data[c];
             // First pass: reductions sum(dy) and sum(dy * xhat).
             double sum_dy = 0.0, sum_dy_xhat = 0.0;
             for (int64_t n = 0; n < N; ++n) {
               const double* g = go.data() + (n * C + c) * inner;
               const double* xv = xi->data.data() + (n * C + c) * inner;
               for (int64_t i = 0; i < inner; ++i) {
                 double xhat = (xv[i] - mu) * is;
                 sum_dy += g[i];
                 sum_dy_xhat += g[i] * xhat;
               }
             }
             gg[c] += sum_dy_xhat;
             gb[c] += sum_dy;
             // Second pass: dx = (gamma*is) * (dy - mean(dy) - xhat*mean(dy*xhat)).
             double k1 = sum_dy * invm;
             double k2 = sum_dy_xhat * invm;
             double a = gamma_c * is;
             for (int64_t n = 0; n < N; ++n) {
               const double* g = go.data() + (n * C + c) * inner;
               const double* xv = xi->data.data() + (n * C + c) * inner;
               double* dxv = gx.data() + (n * C + c) * inner;
               for (int64_t i = 0; i < inner; ++i) {
                 double xhat = (xv[i] - mu) * is;
                 dxv[i] += a * (g[i] - k1 - xhat * k2);
               }
             }
           }
         }});
  }
  return result;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  require<ValueError>(logits.defined(), "cross_entropy: undefined logits");
  const Shape& s = logits.shape();
  require(s.rank() == 2, "cross_entropy: logits must be [N,K], got ", s.str());
  int64_t N = s[0], K = s[1];
  require(static_cast<int64_t>(labels.size()) == N, "cross_entropy: ", labels.size(),
          " labels for batch ", N);
  for (int64_t y : labels)
    require<ValueError>(y >= 0 && y < K, "cross_entropy: label ", y, " out of range [0,", K,
                        ")");
  check_finite(logits.data(), "cross_entropy logits");

  const double* pl = logits.data().data();
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(N * K));
  double loss = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const double* row = pl + n * K;
    double mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      double e = std::exp(row[k] - mx);
      (*probs)[static_cast<size_t>(n * K + k)] = e;
      sum += e;
    }
    double inv = 1.0 / sum;
    for (int64_t k = 0; k < K; ++k) (*probs)[static_cast<size_t>(n * K + k)] *= inv;
    loss += std::log(sum) + mx - row[labels[static_cast<size_t>(n)]];
  }
  loss /= static_cast<double>(N);

  bool tracked = Tape::active().recording() && logits.requires_grad();
  Tensor result = Tensor::from_vector(Shape{}, {loss}, tracked);
  if (tracked) {
    Tape::active().record(
        {{logits.impl()},
         result.impl(),
         [li = logits.impl(), oi = result.impl(), probs, labels, N, K](BackwardPass& bp) {
           double g = (*bp.find(oi.get()))[0] / static_cast<double>(N);
           std::vector<double>& gl = bp.buf(li.get());
           for (int64_t n = 0; n < N; ++n) {
             for (int64_t k = 0; k < K; ++k)
               gl[static_cast<size_t>(n * K + k)] += g * (*probs)[static_cast<size_t>(n * K + k)];
             gl[static_cast<size_t>(n * K + labels[static_cast<size_t>(n)])] -= g;
           }
         }});
  }
  return result;
}

}  // namespace nuta
