#include <cmath>
#include <vector>

#include "doctest.h"
#include "nuta/error.hpp"
#include "nuta/nuta_module.hpp"
#include "nuta/ops.hpp"
#include "nuta/tensor.hpp"
#include "nuta/train.hpp"
#include "support/naive_module.hpp"

using namespace nuta;

namespace {

std::vector<double> vec(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

naive::ModuleWeights naive_weights(const NutaModuleParams& p, int64_t channels,
                                   int64_t conv_groups) {
  naive::ModuleWeights mw;
  mw.phi = vec(p.phi.weight);
  mw.theta = vec(p.theta.weight);
  mw.delta = vec(p.delta.weight);
  mw.zeta = vec(p.zeta.weight);
  mw.compress = vec(p.compress.weight);
  mw.channels = channels;
  mw.heads = p.layout.heads;
  mw.conv_groups = conv_groups;
  return mw;
}

// depthwise identity for the (3,1,1) value convolutions and an identity
// matrix for the pointwise compression: the module then moves frames around
// without transforming them.
void make_identity(NutaModuleParams& p, int64_t channels) {
  for (Tensor* w : {&p.phi.weight, &p.theta.weight, &p.delta.weight, &p.zeta.weight}) {
    REQUIRE((w->shape() == Shape{channels, 1, 3, 1, 1}));  // needs conv_groups == C
    std::vector<double> ident(static_cast<size_t>(channels) * 3, 0.0);
    for (int64_t c = 0; c < channels; ++c) ident[static_cast<size_t>(c * 3 + 1)] = 1.0;
    w->overwrite_data(ident);
  }
  std::vector<double> eye(static_cast<size_t>(channels * channels), 0.0);
  for (int64_t c = 0; c < channels; ++c) eye[static_cast<size_t>(c * channels + c)] = 1.0;
  p.compress.weight.overwrite_data(eye);
}

ProjectionMap onehot_map(int64_t batch, int64_t heads, int64_t targets,
                         int64_t sources, const std::vector<int64_t>& picks) {
  std::vector<double> v(static_cast<size_t>(batch * heads * targets * sources), 0.0);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t s = 0; s < targets; ++s)
        v[static_cast<size_t>(((b * heads + h) * targets + s) * sources +
                              picks[static_cast<size_t>(s)])] = 1.0;
  return ProjectionMap{Tensor::from_vector(Shape{batch, heads, targets, sources},
                                           std::move(v))};
}

}  // namespace

TEST_CASE("gamma places every element where the head split says") {
  // [1, 4, 2, 1, 1], heads 2: value (c, t) lands at [head c/2, t, c%2]
  Tensor x = Tensor::from_vector(Shape{1, 4, 2, 1, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor g = gamma(x, HeadLayout{2});
  CHECK((g.shape() == Shape{1, 2, 2, 2}));
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t t = 0; t < 2; ++t)
      CHECK(g.at({0, c / 2, t, c % 2}) == x.at({0, c, t, 0, 0}));

  Rng r(41);
  Tensor big = Tensor::randn(Shape{2, 8, 4, 3, 5}, r);
  for (int64_t heads : {1, 2, 4, 8}) {
    Tensor gg = gamma(big, HeadLayout{heads});
    auto want = naive::gamma(vec(big), {2, 8, 4, 3, 5}, heads);
    CHECK(vec(gg) == want);  // pure data movement, bitwise
    Tensor back = gamma_inverse(gg, 8, 3, 5);
    CHECK(vec(back) == vec(big));
  }

  CHECK_THROWS_AS(gamma(big, HeadLayout{3}), ShapeError);
}

TEST_CASE("projection map shape and row sums") {
  Rng r(42);
  NutaModuleParams p = NutaModuleParams::make(8, 4, 4, r);
  Tensor f = Tensor::randn(Shape{1, 8, 8, 4, 4}, r);
  ProjectionMap m = projection_map(f, p);
  CHECK((m.values.shape() == Shape{1, 4, 4, 8}));
  CHECK(m.batch() == 1);
  CHECK(m.heads() == 4);
  CHECK(m.target_steps() == 4);
  CHECK(m.source_steps() == 8);
  auto v = m.values.data();
  for (int64_t row = 0; row < 16; ++row) {
    double sum = 0.0;
    for (int64_t s = 0; s < 8; ++s) sum += v[row * 8 + s];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  Tensor odd = Tensor::randn(Shape{1, 8, 5, 4, 4}, r);
  CHECK_THROWS_AS(projection_map(odd, p), ShapeError);
  Tensor narrow = Tensor::randn(Shape{1, 6, 4, 4, 4}, r);
  CHECK_THROWS_AS(projection_map(narrow, p), ShapeError);
}

TEST_CASE("projection map equals the primitive-by-primitive oracle") {
  Rng r(43);
  const int64_t c = 8, heads = 2, groups = 4;
  NutaModuleParams p = NutaModuleParams::make(c, heads, groups, r);
  Tensor f = Tensor::randn(Shape{2, c, 6, 3, 3}, r);
  ProjectionMap m = projection_map(f, p);
  auto mw = naive_weights(p, c, groups);
  auto want = naive::projection_map(vec(f), {2, c, 6, 3, 3}, mw);
  CHECK(naive::max_abs_diff(vec(m.values), want) < 1e-10);
}

TEST_CASE("aggregation and synchronisation equal the oracle composition") {
  Rng r(44);
  const int64_t c = 8, heads = 4, groups = 2;
  NutaModuleParams p = NutaModuleParams::make(c, heads, groups, r);
  Tensor f = Tensor::randn(Shape{2, c, 6, 3, 3}, r);
  Tensor f_res = Tensor::randn(Shape{2, c, 6, 3, 3}, r);
  auto [agg, m] = nuta_forward(f, p);
  CHECK((agg.shape() == Shape{2, c, 3, 3, 3}));

  auto mw = naive_weights(p, c, groups);
  auto m_want = naive::projection_map(vec(f), {2, c, 6, 3, 3}, mw);
  naive::Dims5 od;
  auto agg_want = naive::aggregate(vec(f), {2, c, 6, 3, 3}, m_want, mw, &od);
  CHECK(od.t == 3);
  CHECK(naive::max_abs_diff(vec(agg), agg_want) < 1e-10);

  Tensor sync = temporal_sync(f_res, m, p);
  CHECK((sync.shape() == Shape{2, c, 3, 3, 3}));
  auto sync_want = naive::sync(vec(f_res), {2, c, 6, 3, 3}, m_want, mw, nullptr);
  CHECK(naive::max_abs_diff(vec(sync), sync_want) < 1e-10);
}

TEST_CASE("one-hot rows select frames exactly through an identity module") {
  Rng r(45);
  const int64_t c = 4, heads = 2, t = 6;
  NutaModuleParams p = NutaModuleParams::make(c, heads, c, r);  // depthwise
  make_identity(p, c);
  Tensor f = Tensor::randn(Shape{1, c, t, 2, 2}, r);
  std::vector<int64_t> picks{5, 0, 3};
  ProjectionMap m = onehot_map(1, heads, t / 2, t, picks);
  Tensor agg = nuta_aggregate(f, m, p);
  for (int64_t s = 0; s < 3; ++s)
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t w = 0; w < 2; ++w)
          CHECK(agg.at({0, cc, s, h, w}) ==
                f.at({0, cc, picks[static_cast<size_t>(s)], h, w}));
}

TEST_CASE("uniform rows average all frames through an identity module") {
  Rng r(46);
  const int64_t c = 4, t = 4;
  NutaModuleParams p = NutaModuleParams::make(c, 1, c, r);
  make_identity(p, c);
  Tensor f = Tensor::randn(Shape{1, c, t, 2, 2}, r);
  ProjectionMap m{Tensor::full(Shape{1, 1, 2, 4}, 0.25)};
  Tensor agg = nuta_aggregate(f, m, p);
  for (int64_t cc = 0; cc < c; ++cc)
    for (int64_t h = 0; h < 2; ++h)
      for (int64_t w = 0; w < 2; ++w) {
        double mean = 0.0;
        for (int64_t tt = 0; tt < t; ++tt) mean += f.at({0, cc, tt, h, w});
        mean /= 4.0;
        CHECK(agg.at({0, cc, 0, h, w}) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(agg.at({0, cc, 1, h, w}) == doctest::Approx(mean).epsilon(1e-12));
      }
}

TEST_CASE("synchronising a constant clip through an identity module doubles it") {
  // projection of a constant is the constant (rows sum to 1), and the
  // max-pool arm contributes the same constant again
  Rng r(47);
  const int64_t c = 4;
  NutaModuleParams p = NutaModuleParams::make(c, 2, c, r);
  make_identity(p, c);
  // any valid map works; take one from a random clip
  ProjectionMap m = projection_map(Tensor::randn(Shape{1, c, 6, 2, 2}, r), p);
  Tensor f_res = Tensor::full(Shape{1, c, 6, 2, 2}, 1.75);
  Tensor sync = temporal_sync(f_res, m, p);
  for (double v : sync.data()) CHECK(v == doctest::Approx(2.0 * 1.75).epsilon(1e-12));
}

TEST_CASE("synchronisation validates the compress width") {
  Rng r(48);
  NutaModuleParams p = NutaModuleParams::make(8, 2, 2, r);
  ProjectionMap m = projection_map(Tensor::randn(Shape{1, 8, 4, 2, 2}, r), p);
  Tensor wrong = Tensor::randn(Shape{1, 4, 4, 2, 2}, r);
  CHECK_THROWS_AS(temporal_sync(wrong, m, p), ShapeError);
}

TEST_CASE("attention mass") {
  // uniform map: mass on k informative of T frames = k / T
  ProjectionMap uniform{Tensor::full(Shape{2, 4, 4, 8}, 0.125)};
  CHECK(attention_mass(uniform, {{1, 5}, {0, 7}}) == doctest::Approx(0.25).epsilon(1e-12));

  // one-hot rows landing on informative frames: mass 1
  ProjectionMap sharp = onehot_map(1, 2, 2, 4, {3, 1});
  CHECK(attention_mass(sharp, {{1, 3}}) == doctest::Approx(1.0).epsilon(1e-12));
  // ... and landing elsewhere: mass 0
  CHECK(attention_mass(sharp, {{0, 2}}) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(attention_mass(sharp, {{4}}), ValueError);
  CHECK_THROWS_AS(attention_mass(sharp, {{1}, {2}}), ValueError);
}
