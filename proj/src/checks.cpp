#include "nuta/checks.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "nuta/error.hpp"
#include "nuta/nn_ops.hpp"
#include "nuta/nuta_module.hpp"
#include "nuta/ops.hpp"
#include "nuta/rng.hpp"
#include "nuta/tensor.hpp"

namespace nuta {

namespace {

Tensor constant_in_time(int64_t n, int64_t c, int64_t t, int64_t h, int64_t w,
                        Rng& rng) {
  const int64_t hw = h * w;
  std::vector<double> frame(static_cast<size_t>(n * c * hw));
  for (auto& v : frame) v = rng.normal();
  std::vector<double> data(static_cast<size_t>(n * c * t * hw));
  for (int64_t nn = 0; nn < n; ++nn)
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t tt = 0; tt < t; ++tt)
        std::copy_n(frame.begin() + (nn * c + cc) * hw, hw,
                    data.begin() + ((nn * c + cc) * t + tt) * hw);
  return Tensor::from_vector(Shape{n, c, t, h, w}, std::move(data));
}

bool exactly_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

std::vector<CheckResult> run_property_checks(uint64_t seed) {
  std::vector<CheckResult> out;
  const int64_t t_sweep[] = {4, 6, 8};
  const int64_t n_sweep[] = {1, 2, 4};

  {
    CheckResult r{"projection_rows_stochastic", true, ""};
    double worst = 0.0;
    int64_t inputs = 0;
    Rng rng(mix_seed(seed, 100));
    for (int64_t t : t_sweep)
      for (int64_t n : n_sweep)
        for (int rep = 0; rep < 14; ++rep) {
          NutaModuleParams p = NutaModuleParams::make(8, n, n, rng);
          Tensor f = Tensor::randn(Shape{8, 8, t, 3, 3}, rng, 2.0);
          inputs += 8;
          ProjectionMap m = projection_map(f, p);
          auto v = m.values.data();
          const int64_t rows = m.batch() * m.heads() * m.target_steps();
          for (int64_t row = 0; row < rows; ++row) {
            double sum = 0.0;
            for (int64_t s = 0; s < t; ++s) {
              double e = v[row * t + s];
              if (e < 0.0 || e > 1.0) r.passed = false;
              sum += e;
            }
            worst = std::max(worst, std::abs(sum - 1.0));
          }
        }
    if (worst > 1e-6) r.passed = false;
    r.detail = cat(inputs, " random inputs, worst |row sum - 1| = ", worst);
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"projection_constant_input_uniform", true, ""};
    double worst = 0.0;
    int64_t inputs = 0;
    Rng rng(mix_seed(seed, 101));
    for (int64_t t : t_sweep)
      for (int64_t n : n_sweep)
        for (int rep = 0; rep < 14; ++rep) {
          NutaModuleParams p = NutaModuleParams::make(8, n, n, rng);
          Tensor f = constant_in_time(8, 8, t, 3, 3, rng);
          inputs += 8;
          ProjectionMap m = projection_map(f, p);
          const double want = 1.0 / static_cast<double>(t);
          for (double e : m.values.data()) worst = std::max(worst, std::abs(e - want));
        }
    r.passed = worst <= 1e-6;
    r.detail = cat(inputs, " constant inputs, worst |entry - 1/T| = ", worst);
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"gamma_inverse_bitwise", true, ""};
    Rng rng(mix_seed(seed, 102));
    struct Case {
      int64_t n, c, t, h, w, heads;
    };
    const Case cases[] = {{2, 8, 4, 3, 3, 1}, {2, 8, 4, 3, 3, 2}, {2, 8, 4, 3, 3, 4},
                          {2, 8, 4, 3, 3, 8}, {1, 6, 2, 2, 5, 3}, {1, 6, 2, 2, 5, 6}};
    for (const Case& c : cases) {
      Tensor x = Tensor::randn(Shape{c.n, c.c, c.t, c.h, c.w}, rng);
      Tensor y = gamma_inverse(gamma(x, HeadLayout{c.heads}), c.c, c.h, c.w);
      if (!exactly_equal(x.data(), y.data())) {
        r.passed = false;
        r.detail = cat("mismatch at heads=", c.heads);
        break;
      }
    }
    if (r.passed) r.detail = "round trip exact over 6 shapes";
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"softmax_shift_invariance", true, ""};
    Rng rng(mix_seed(seed, 103));
    Tensor x = Tensor::randn(Shape{3, 5}, rng, 2.0);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (int64_t row = 0; row < 3; ++row) {
      double c = rng.uniform(-10.0, 10.0);
      for (int64_t j = 0; j < 5; ++j) shifted[static_cast<size_t>(row * 5 + j)] += c;
    }
    Tensor x2 = Tensor::from_vector(Shape{3, 5}, std::move(shifted));
    auto a = softmax_lastdim(x).data();
    auto b = softmax_lastdim(x2).data();
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    r.passed = worst <= 1e-12;
    r.detail = cat("worst |delta| = ", worst);
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"head_channel_independence", true, ""};
    Rng rng(mix_seed(seed, 104));
    const int64_t heads = 4, c = 8, t = 4, h = 2, w = 2;
    NutaModuleParams p = NutaModuleParams::make(c, heads, heads, rng);
    Tensor f1 = Tensor::randn(Shape{1, c, t, h, w}, rng);
    std::vector<double> d2(f1.data().begin(), f1.data().end());
    const int64_t per_head = c / heads;
    const int64_t jammed = 1;  // overwrite this head's channels
    for (int64_t cc = jammed * per_head; cc < (jammed + 1) * per_head; ++cc)
      for (int64_t i = 0; i < t * h * w; ++i)
        d2[static_cast<size_t>(cc * t * h * w + i)] = rng.normal();
    Tensor f2 = Tensor::from_vector(Shape{1, c, t, h, w}, std::move(d2));
    auto m1 = projection_map(f1, p).values.data();
    auto m2 = projection_map(f2, p).values.data();
    const int64_t block = (t / 2) * t;  // one head's rows
    bool jammed_changed = false;
    for (int64_t hd = 0; hd < heads; ++hd) {
      bool same = std::equal(m1.begin() + hd * block, m1.begin() + (hd + 1) * block,
                             m2.begin() + hd * block);
      if (hd == jammed) {
        jammed_changed = !same;
      } else if (!same) {
        r.passed = false;
        r.detail = cat("head ", hd, " changed when head ", jammed, " was perturbed");
      }
    }
    if (r.passed && !jammed_changed) {
      r.passed = false;
      r.detail = "perturbed head did not change at all (degenerate check)";
    }
    if (r.passed) r.detail = "other heads bitwise intact";
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"batch_independence", true, ""};
    Rng rng(mix_seed(seed, 105));
    const int64_t c = 8, t = 4, h = 3, w = 3;
    NutaModuleParams p = NutaModuleParams::make(c, 2, 2, rng);
    Tensor f = Tensor::randn(Shape{2, c, t, h, w}, rng);
    auto d = f.data();
    const int64_t half = f.numel() / 2;
    Tensor fa = Tensor::from_vector(Shape{1, c, t, h, w},
                                    std::vector<double>(d.begin(), d.begin() + half));
    Tensor fb = Tensor::from_vector(Shape{1, c, t, h, w},
                                    std::vector<double>(d.begin() + half, d.end()));
    auto m = projection_map(f, p).values.data();
    auto ma = projection_map(fa, p).values.data();
    auto mb = projection_map(fb, p).values.data();
    const int64_t per = static_cast<int64_t>(ma.size());
    bool first = std::equal(ma.begin(), ma.end(), m.begin());
    bool second = std::equal(mb.begin(), mb.end(), m.begin() + per);
    r.passed = first && second;
    r.detail = r.passed ? "stacked batch matches per-sample maps bitwise"
                        : cat("mismatch in sample ", first ? 1 : 0);
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"replicate_pad_time_constancy", true, ""};
    Rng rng(mix_seed(seed, 106));
    Conv3dParams p = Conv3dParams::make(4, 4, {3, 1, 1}, {1, 1, 1}, {1, 0, 0}, 2,
                                        false, TemporalPad::replicate, rng);
    Tensor x = constant_in_time(1, 4, 5, 2, 2, rng);
    Tensor y = conv3d(x, p);
    auto v = y.data();
    const int64_t t = 5, hw = 4;
    for (int64_t cc = 0; cc < 4 && r.passed; ++cc)
      for (int64_t tt = 1; tt < t && r.passed; ++tt)
        for (int64_t i = 0; i < hw; ++i)
          if (v[(cc * t + tt) * hw + i] != v[cc * t * hw + i]) {
            r.passed = false;
            r.detail = cat("frame ", tt, " differs from frame 0 in channel ", cc);
            break;
          }
    if (r.passed) r.detail = "output exactly constant across 5 frames";
    out.push_back(std::move(r));
  }

  {
    CheckResult r{"backward_linearity", true, ""};
    Rng rng(mix_seed(seed, 107));
    Tensor x0 = Tensor::randn(Shape{3, 6}, rng);
    Tensor wmat = Tensor::randn(Shape{6, 4}, rng);
    Tensor w1 = Tensor::randn(Shape{3, 4}, rng);
    Tensor w2 = Tensor::randn(Shape{3, 4}, rng);
    auto grad_of = [&](double alpha, double beta) {
      Tape::active().clear();
      Tensor x = x0.detached_copy(true);
      Tensor y = softmax_lastdim(matmul(relu(x), wmat));
      Tensor loss =
          add(scale(sum_all(mul(y, w1)), alpha), scale(sum_all(mul(y, w2)), beta));
      Tape::active().backward(loss);
      auto g = x.grad();
      std::vector<double> copy(g.begin(), g.end());
      Tape::active().clear();
      return copy;
    };
    auto g1 = grad_of(1.0, 0.0);
    auto g2 = grad_of(0.0, 1.0);
    auto g3 = grad_of(0.7, -1.3);
    double worst = 0.0;
    for (size_t i = 0; i < g3.size(); ++i)
      worst = std::max(worst, std::abs(g3[i] - (0.7 * g1[i] - 1.3 * g2[i])));
    r.passed = worst <= 1e-9;
    r.detail = cat("worst |delta| = ", worst);
    out.push_back(std::move(r));
  }

  return out;
}

}  // namespace nuta
