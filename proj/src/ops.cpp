#include "nuta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "nuta/error.hpp"
#include "nuta/mac_counter.hpp"
#include "nuta/parallel.hpp"

namespace nuta {

namespace {

void req_def(const Tensor& t, const char* op) {
  require<ValueError>(t.defined(), op, ": undefined input tensor");
}

bool track(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active().recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor finish(const Shape& shape, std::vector<double> data, bool tracked) {
  if (finite_checks()) check_finite(data, "op output");
  return Tensor::from_vector(shape, std::move(data), tracked);
}

// C[p, q] += sum_k A[p*as_p + k*as_k] * B[k*bs_k + q*bs_q], batched with
// dense storage strides (batch b offsets A by b*P*K elements of its storage,
// regardless of the logical-transpose accessors). The loop order adapts so
// the innermost loop runs over contiguous memory for the common accessors.
template <bool COUNT>
void mm_strided(double* C, const double* A, const double* B, int64_t batch, int64_t P,
                int64_t K, int64_t Q, int64_t as_p, int64_t as_k, int64_t bs_k,
                int64_t bs_q, int64_t a_batch, int64_t b_batch) {
  uint64_t counted = 0;
  for (int64_t b = 0; b < batch; ++b) {
    const double* Ab = A + b * a_batch;
    const double* Bb = B + b * b_batch;
    double* Cb = C + b * P * Q;
    if (bs_q == 1) {
      for (int64_t p = 0; p < P; ++p) {
        double* crow = Cb + p * Q;
        for (int64_t k = 0; k < K; ++k) {
          double a = Ab[p * as_p + k * as_k];
          const double* brow = Bb + k * bs_k;
          for (int64_t q = 0; q < Q; ++q) {
            crow[q] += a * brow[q];
            if constexpr (COUNT) ++counted;
          }
        }
      }
    } else {
      for (int64_t p = 0; p < P; ++p) {
        for (int64_t q = 0; q < Q; ++q) {
          const double* arow = Ab + p * as_p;
          const double* bcol = Bb + q * bs_q;
          double acc = 0.0;
          for (int64_t k = 0; k < K; ++k) {
            acc += arow[k * as_k] * bcol[k * bs_k];
            if constexpr (COUNT) ++counted;
          }
          Cb[p * Q + q] += acc;
        }
      }
    }
  }
  if constexpr (COUNT) macs::add(counted);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  req_def(a, "matmul");
  req_def(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.rank() >= 2 && sb.rank() >= 2, "matmul: rank must be >= 2, got ", sa.str(),
          " and ", sb.str());
  require(sa.rank() == sb.rank(), "matmul: rank mismatch ", sa.str(), " vs ", sb.str());
  int64_t r = sa.rank();
  int64_t batch = 1;
  for (int64_t i = 0; i < r - 2; ++i) {
    require(sa[i] == sb[i], "matmul: leading extent mismatch at axis ", i, ": ", sa.str(),
            " vs ", sb.str());
    batch *= sa[i];
  }
  int64_t P = sa[r - 2], K = sa[r - 1], Q = sb[r - 1];
  require(sb[r - 2] == K, "matmul: inner extent mismatch ", sa.str(), " vs ", sb.str());

  std::vector<int64_t> out_dims(sa.dims());
  out_dims[static_cast<size_t>(r - 1)] = Q;
  Shape out_shape(out_dims);

  std::vector<double> out(static_cast<size_t>(out_shape.numel()), 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  auto run = [&](double* C) {
    if (macs::enabled()) {
      mm_strided<true>(C, A, B, batch, P, K, Q, K, 1, Q, 1, P * K, K * Q);
    } else if (batch > 1) {
      parallel_for(0, batch, [&](int64_t lo, int64_t hi) {
        mm_strided<false>(C + lo * P * Q, A + lo * P * K, B + lo * K * Q, hi - lo, P, K, Q,
                          K, 1, Q, 1, P * K, K * Q);
      });
    } else {
      mm_strided<false>(C, A, B, batch, P, K, Q, K, 1, Q, 1, P * K, K * Q);
    }
  };
  run(out.data());

  bool tracked = track({&a, &b});
  Tensor result = finish(out_shape, std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{a.impl(), b.impl()},
         result.impl(),
         [ai = a.impl(), bi = b.impl(), oi = result.impl(), batch, P, K, Q](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           // dA[P,K] = dC[P,Q] x B^T : accessor over stored B [K,Q].
           mm_strided<false>(bp.buf(ai.get()).data(), go.data(), bi->data.data(), batch, P,
                             Q, K, Q, 1, 1, Q, P * Q, K * Q);
           // dB[K,Q] = A^T x dC : accessor over stored A [P,K].
           mm_strided<false>(bp.buf(bi.get()).data(), ai->data.data(), go.data(), batch, K,
                             P, Q, 1, K, Q, 1, P * K, P * Q);
         }});
  }
  return result;
}

Tensor softmax_lastdim(const Tensor& x) {
  req_def(x, "softmax_lastdim");
  const Shape& s = x.shape();
  require(s.rank() >= 1, "softmax_lastdim: needs rank >= 1");
  check_finite(x.data(), "softmax_lastdim input");
  int64_t L = s[s.rank() - 1];
  int64_t rows = s.numel() / L;

  std::vector<double> out(static_cast<size_t>(s.numel()));
  const double* in = x.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = in + r * L;
    double* orow = out.data() + r * L;
    double m = row[0];
    for (int64_t i = 1; i < L; ++i) m = std::max(m, row[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < L; ++i) {
      orow[i] = std::exp(row[i] - m);
      sum += orow[i];
    }
    double inv = 1.0 / sum;
    for (int64_t i = 0; i < L; ++i) orow[i] *= inv;
  }
  if (macs::enabled()) macs::add(2 * static_cast<uint64_t>(s.numel()));

  bool tracked = track({&x});
  Tensor result = finish(s, std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{x.impl()},
         result.impl(),
         [xi = x.impl(), oi = result.impl(), rows, L](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           const std::vector<double>& p = oi->data;
           std::vector<double>& gx = bp.buf(xi.get());
           for (int64_t r = 0; r < rows; ++r) {
             const double* prow = p.data() + r * L;
             const double* grow = go.data() + r * L;
             double dot = 0.0;
             for (int64_t i = 0; i < L; ++i) dot += prow[i] * grow[i];
             double* gxrow = gx.data() + r * L;
             for (int64_t i = 0; i < L; ++i) gxrow[i] += prow[i] * (grow[i] - dot);
           }
         }});
  }
  return result;
}

Tensor reshape(const Tensor& x, const Shape& new_shape) {
  req_def(x, "reshape");
  require(x.numel() == new_shape.numel(), "reshape: element count mismatch, ",
          x.shape().str(), " -> ", new_shape.str());
  std::vector<double> out(x.data().begin(), x.data().end());
  bool tracked = track({&x});
  Tensor result = finish(new_shape, std::move(out), tracked);
  if (tracked) {
    Tape::active().record({{x.impl()},
                           result.impl(),
                           [xi = x.impl(), oi = result.impl()](BackwardPass& bp) {
                             const std::vector<double>& go = *bp.find(oi.get());
                             std::vector<double>& gx = bp.buf(xi.get());
                             for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                           }});
  }
  return result;
}

namespace {
// out[j] = in[map(j)] where map is an axis permutation; used forward and, with
// the inverse order, for the gradient.
std::vector<double> permute_data(const std::vector<double>& in, const Shape& in_shape,
                                 const std::vector<int64_t>& order, Shape& out_shape) {
  int64_t r = in_shape.rank();
  std::vector<int64_t> out_dims(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) out_dims[static_cast<size_t>(i)] = in_shape[order[static_cast<size_t>(i)]];
  out_shape = Shape(out_dims);

  auto in_strides = in_shape.strides();
  std::vector<int64_t> gather(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i)
    gather[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(order[static_cast<size_t>(i)])];

  std::vector<double> out(in.size());
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t src = 0;
  for (size_t j = 0; j < out.size(); ++j) {
    out[j] = in[static_cast<size_t>(src)];
    for (int64_t axis = r - 1; axis >= 0; --axis) {
      size_t a = static_cast<size_t>(axis);
      if (++idx[a] < out_dims[a]) {
        src += gather[a];
        break;
      }
      src -= gather[a] * (out_dims[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<int64_t>& axis_order) {
  req_def(x, "permute");
  int64_t r = x.shape().rank();
  require(static_cast<int64_t>(axis_order.size()) == r, "permute: order size ",
          axis_order.size(), " != rank ", r);
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int64_t a : axis_order) {
    require(a >= 0 && a < r, "permute: axis ", a, " out of range");
    require(!seen[static_cast<size_t>(a)], "permute: duplicate axis ", a);
    seen[static_cast<size_t>(a)] = true;
  }
  if (r == 0) return x;  // no axes to move

  Shape out_shape;
  std::vector<double> out =
      permute_data(std::vector<double>(x.data().begin(), x.data().end()), x.shape(),
                   axis_order, out_shape);

  bool tracked = track({&x});
  Tensor result = finish(out_shape, std::move(out), tracked);
  if (tracked) {
    std::vector<int64_t> inverse(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) inverse[static_cast<size_t>(axis_order[static_cast<size_t>(i)])] = i;
    Tape::active().record(
        {{x.impl()},
         result.impl(),
         [xi = x.impl(), oi = result.impl(), inverse](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           Shape back_shape;
           std::vector<double> gin = permute_data(go, oi->shape, inverse, back_shape);
           std::vector<double>& gx = bp.buf(xi.get());
           for (size_t i = 0; i < gin.size(); ++i) gx[i] += gin[i];
         }});
  }
  return result;
}

Tensor transpose_last2(const Tensor& x) {
  req_def(x, "transpose_last2");
  int64_t r = x.shape().rank();
  require(r >= 2, "transpose_last2: needs rank >= 2");
  std::vector<int64_t> order(static_cast<size_t>(r));
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[static_cast<size_t>(r - 2)], order[static_cast<size_t>(r - 1)]);
  return permute(x, order);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  req_def(a, "concat_channels");
  req_def(b, "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.rank() >= 2 && sa.rank() == sb.rank(),
          "concat_channels: rank mismatch ", sa.str(), " vs ", sb.str());
  for (int64_t i = 0; i < sa.rank(); ++i) {
    if (i == 1) continue;
    require(sa[i] == sb[i], "concat_channels: extent mismatch at axis ", i, ": ", sa.str(),
            " vs ", sb.str());
  }
  int64_t outer = sa[0];
  int64_t inner = 1;
  for (int64_t i = 2; i < sa.rank(); ++i) inner *= sa[i];
  int64_t ablock = sa[1] * inner;
  int64_t bblock = sb[1] * inner;

  std::vector<int64_t> out_dims(sa.dims());
  out_dims[1] = sa[1] + sb[1];
  Shape out_shape(out_dims);

  std::vector<double> out(static_cast<size_t>(out_shape.numel()));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int64_t n = 0; n < outer; ++n) {
    double* dst = out.data() + n * (ablock + bblock);
    std::memcpy(dst, pa + n * ablock, static_cast<size_t>(ablock) * sizeof(double));
    std::memcpy(dst + ablock, pb + n * bblock, static_cast<size_t>(bblock) * sizeof(double));
  }

  bool tracked = track({&a, &b});
  Tensor result = finish(out_shape, std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{a.impl(), b.impl()},
         result.impl(),
         [ai = a.impl(), bi = b.impl(), oi = result.impl(), outer, ablock,
          bblock](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& ga = bp.buf(ai.get());
           std::vector<double>& gb = bp.buf(bi.get());
           for (int64_t n = 0; n < outer; ++n) {
             const double* src = go.data() + n * (ablock + bblock);
             double* da = ga.data() + n * ablock;
             double* db = gb.data() + n * bblock;
             for (int64_t i = 0; i < ablock; ++i) da[i] += src[i];
             for (int64_t i = 0; i < bblock; ++i) db[i] += src[ablock + i];
           }
         }});
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  req_def(a, "add");
  req_def(b, "add");
  require(a.shape() == b.shape(), "add: shape mismatch ", a.shape().str(), " vs ",
          b.shape().str());
  std::vector<double> out(static_cast<size_t>(a.numel()));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];

  bool tracked = track({&a, &b});
  Tensor result = finish(a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{a.impl(), b.impl()},
         result.impl(),
         [ai = a.impl(), bi = b.impl(), oi = result.impl()](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& ga = bp.buf(ai.get());
           std::vector<double>& gb = bp.buf(bi.get());
           for (size_t i = 0; i < go.size(); ++i) {
             ga[i] += go[i];
             gb[i] += go[i];
           }
         }});
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  req_def(a, "mul");
  req_def(b, "mul");
  require(a.shape() == b.shape(), "mul: shape mismatch ", a.shape().str(), " vs ",
          b.shape().str());
  std::vector<double> out(static_cast<size_t>(a.numel()));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];

  bool tracked = track({&a, &b});
  Tensor result = finish(a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{a.impl(), b.impl()},
         result.impl(),
         [ai = a.impl(), bi = b.impl(), oi = result.impl()](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& ga = bp.buf(ai.get());
           std::vector<double>& gb = bp.buf(bi.get());
           for (size_t i = 0; i < go.size(); ++i) {
             ga[i] += go[i] * bi->data[i];
             gb[i] += go[i] * ai->data[i];
           }
         }});
  }
  return result;
}

Tensor scale(const Tensor& x, double factor) {
  req_def(x, "scale");
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* px = x.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = px[i] * factor;

  bool tracked = track({&x});
  Tensor result = finish(x.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active().record({{x.impl()},
                           result.impl(),
                           [xi = x.impl(), oi = result.impl(), factor](BackwardPass& bp) {
                             const std::vector<double>& go = *bp.find(oi.get());
                             std::vector<double>& gx = bp.buf(xi.get());
                             for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
                           }});
  }
  return result;
}

Tensor relu(const Tensor& x) {
  req_def(x, "relu");
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* px = x.data().data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;

  bool tracked = track({&x});
  Tensor result = finish(x.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active().record({{x.impl()},
                           result.impl(),
                           [xi = x.impl(), oi = result.impl()](BackwardPass& bp) {
                             const std::vector<double>& go = *bp.find(oi.get());
                             std::vector<double>& gx = bp.buf(xi.get());
                             for (size_t i = 0; i < go.size(); ++i)
                               if (xi->data[i] > 0.0) gx[i] += go[i];
                           }});
  }
  return result;
}

Tensor sum_all(const Tensor& x) {
  req_def(x, "sum_all");
  double total = 0.0;
  for (double v : x.data()) total += v;

  bool tracked = track({&x});
  Tensor result = finish(Shape{}, {total}, tracked);
  if (tracked) {
    Tape::active().record({{x.impl()},
                           result.impl(),
                           [xi = x.impl(), oi = result.impl()](BackwardPass& bp) {
                             double g = (*bp.find(oi.get()))[0];
                             std::vector<double>& gx = bp.buf(xi.get());
                             for (double& v : gx) v += g;
                           }});
  }
  return result;
}

Tensor dropout(const Tensor& x, double ratio, bool train_mode, Rng& rng) {
  req_def(x, "dropout");
  require<ValueError>(ratio >= 0.0 && ratio < 1.0, "dropout: ratio must be in [0,1), got ",
                      ratio);
  if (!train_mode) return x;  // identity, consumes no randomness

  double keep_scale = 1.0 / (1.0 - ratio);
  size_t n = static_cast<size_t>(x.numel());
  std::vector<double> factors(n);
  for (size_t i = 0; i < n; ++i)
    factors[i] = rng.uniform() >= ratio ? keep_scale : 0.0;

  std::vector<double> out(n);
  const double* px = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = px[i] * factors[i];
  if (macs::enabled()) macs::add(static_cast<uint64_t>(n));

  bool tracked = track({&x});
  Tensor result = finish(x.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{x.impl()},
         result.impl(),
         [xi = x.impl(), oi = result.impl(), factors = std::move(factors)](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& gx = bp.buf(xi.get());
           for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factors[i];
         }});
  }
  return result;
}

Tensor mean_lastdims(const Tensor& x, int64_t num_dims) {
  req_def(x, "mean_lastdims");
  const Shape& s = x.shape();
  require(num_dims >= 1 && num_dims <= s.rank(), "mean_lastdims: num_dims ", num_dims,
          " invalid for shape ", s.str());
  int64_t block = 1;
  for (int64_t i = s.rank() - num_dims; i < s.rank(); ++i) block *= s[i];
  int64_t outer = s.numel() / block;
  std::vector<int64_t> out_dims(s.dims().begin(), s.dims().end() - num_dims);
  Shape out_shape(out_dims);

  double inv = 1.0 / static_cast<double>(block);
  std::vector<double> out(static_cast<size_t>(outer));
  const double* px = x.data().data();
  for (int64_t j = 0; j < outer; ++j) {
    double acc = 0.0;
    const double* row = px + j * block;
    for (int64_t i = 0; i < block; ++i) acc += row[i];
    out[static_cast<size_t>(j)] = acc * inv;
  }
  if (macs::enabled()) macs::add(static_cast<uint64_t>(outer));

  bool tracked = track({&x});
  Tensor result = finish(out_shape, std::move(out), tracked);
  if (tracked) {
    Tape::active().record(
        {{x.impl()},
         result.impl(),
         [xi = x.impl(), oi = result.impl(), outer, block, inv](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           std::vector<double>& gx = bp.buf(xi.get());
           for (int64_t j = 0; j < outer; ++j) {
             double g = go[static_cast<size_t>(j)] * inv;
             double* row = gx.data() + j * block;
             for (int64_t i = 0; i < block; ++i) row[i] += g;
           }
         }});
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  req_def(x, "linear");
  req_def(weight, "linear");
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  require(sx.rank() == 2 && sw.rank() == 2, "linear: x and weight must be rank 2, got ",
          sx.str(), " and ", sw.str());
  int64_t N = sx[0], K = sx[1], M = sw[0];
  require(sw[1] == K, "linear: weight shape ", sw.str(), " incompatible with input ",
          sx.str());
  if (bias.defined())
    require(bias.shape() == Shape{M}, "linear: bias shape ", bias.shape().str(),
            " != [", M, "]");

  std::vector<double> out(static_cast<size_t>(N * M), 0.0);
  // y = x . W^T, accessor over stored W [M, K].
  if (macs::enabled())
    mm_strided<true>(out.data(), x.data().data(), weight.data().data(), 1, N, K, M, K, 1,
                     1, K, 0, 0);
  else
    mm_strided<false>(out.data(), x.data().data(), weight.data().data(), 1, N, K, M, K, 1,
                      1, K, 0, 0);
  if (bias.defined()) {
    const double* pb = bias.data().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t m = 0; m < M; ++m) out[static_cast<size_t>(n * M + m)] += pb[m];
  }

  bool tracked = bias.defined() ? track({&x, &weight, &bias}) : track({&x, &weight});
  Tensor result = finish(Shape{N, M}, std::move(out), tracked);
  if (tracked) {
    std::vector<std::shared_ptr<TensorImpl>> ins{x.impl(), weight.impl()};
    if (bias.defined()) ins.push_back(bias.impl());
    Tape::active().record(
        {ins,
         result.impl(),
         [xi = x.impl(), wi = weight.impl(),
          bi = bias.defined() ? bias.impl() : nullptr, oi = result.impl(), N, K,
          M](BackwardPass& bp) {
           const std::vector<double>& go = *bp.find(oi.get());
           // dx[N,K] = dy[N,M] . W[M,K]
           mm_strided<false>(bp.buf(xi.get()).data(), go.data(), wi->data.data(), 1, N, M,
                             K, M, 1, K, 1, 0, 0);
           // dW[M,K] = dy^T[M,N] . x[N,K]
           mm_strided<false>(bp.buf(wi.get()).data(), go.data(), xi->data.data(), 1, M, N,
                             K, 1, M, K, 1, 0, 0);
           if (bi) {
             std::vector<double>& gb = bp.buf(bi.get());
             for (int64_t n = 0; n < N; ++n)
               for (int64_t m = 0; m < M; ++m)
                 gb[static_cast<size_t>(m)] += go[static_cast<size_t>(n * M + m)];
           }
         }});
  }
  return result;
}

}  // namespace nuta
