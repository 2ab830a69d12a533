#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "doctest.h"
#include "nuta/error.hpp"
#include "nuta/ops.hpp"
#include "nuta/rng.hpp"
#include "nuta/shape.hpp"
#include "nuta/tensor.hpp"
#include "support/naive_ops.hpp"

using namespace nuta;

TEST_CASE("shape basics") {
  Shape s{2, 3, 4};
  CHECK(s.rank() == 3);
  CHECK(s.numel() == 24);
  CHECK(s[0] == 2);
  CHECK(s[2] == 4);
  CHECK((s == Shape{2, 3, 4}));
  CHECK_FALSE((s == Shape{2, 3, 5}));
  auto st = s.strides();
  CHECK(st[0] == 12);
  CHECK(st[1] == 4);
  CHECK(st[2] == 1);
  CHECK_THROWS_AS(Shape{0}, ShapeError);
  CHECK_THROWS_AS((Shape{2, -1}), ShapeError);
}

TEST_CASE("rng determinism and ranges") {
  Rng a(42), b(42), c(43);
  bool all_same = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
    CHECK(ua >= 0.0);
    CHECK(ua < 1.0);
    all_same = all_same && (ua == ub);
    any_diff = any_diff || (ua != uc);
  }
  CHECK(all_same);
  CHECK(any_diff);

  Rng d(7);
  for (int i = 0; i < 200; ++i) {
    int64_t v = d.uniform_int(5);
    CHECK(v >= 0);
    CHECK(v < 5);
  }

  Rng e(7);
  double mean = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) mean += e.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.1);

  CHECK(mix_seed(1, 2) != mix_seed(1, 3));
  CHECK(mix_seed(1, 2) != mix_seed(2, 2));
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 2));
}

TEST_CASE("rng shuffle is a permutation") {
  Rng r(11);
  std::vector<int64_t> v{0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  std::set<int64_t> seen(v.begin(), v.end());
  CHECK(seen.size() == 8);
}

TEST_CASE("tensor factories and element access") {
  Tensor z = Tensor::zeros(Shape{2, 2});
  for (double v : z.data()) CHECK(v == 0.0);
  Tensor f = Tensor::full(Shape{3}, 2.5);
  CHECK(f.at({1}) == 2.5);
  Tensor fv = Tensor::from_vector(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(fv.at({0, 0}) == 1.0);
  CHECK(fv.at({1, 2}) == 6.0);
  CHECK(Tensor::scalar(7.0).item() == 7.0);
  CHECK_THROWS_AS(Tensor::from_vector(Shape{2, 3}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(fv.item(), ValueError);
  Tensor undefined;
  CHECK_FALSE(undefined.defined());
}

TEST_CASE("autodiff on scalar composition") {
  // y = (a + b) * a  ->  dy/da = 2a + b, dy/db = a
  Tape::active().clear();
  Tensor a = Tensor::scalar(2.0, true);
  Tensor b = Tensor::scalar(3.0, true);
  Tensor y = mul(add(a, b), a);
  CHECK(y.item() == doctest::Approx(10.0));
  Tape::active().backward(y);
  CHECK(a.grad()[0] == doctest::Approx(7.0));
  CHECK(b.grad()[0] == doctest::Approx(2.0));

  // a second backward on a fresh graph accumulates into .grad
  Tape::active().clear();
  Tensor y2 = mul(add(a, b), a);
  Tape::active().backward(y2);
  CHECK(a.grad()[0] == doctest::Approx(14.0));
  // zero_grad drops the buffer entirely; the optimiser uses has_grad() to
  // skip parameters a loss never touched
  a.zero_grad();
  CHECK_FALSE(a.has_grad());
  CHECK_THROWS_AS(a.grad(), ValueError);
  Tape::active().clear();
}

TEST_CASE("backward rejects detached and non-scalar losses") {
  Tape::active().clear();
  Tensor detached = Tensor::scalar(1.0);
  CHECK_THROWS_AS(Tape::active().backward(detached), ValueError);

  Tensor a = Tensor::from_vector(Shape{2}, {1, 2}, true);
  Tensor y = scale(a, 2.0);
  CHECK_THROWS_AS(Tape::active().backward(y), ValueError);
  Tape::active().clear();
}

TEST_CASE("no-grad guard suspends recording") {
  Tape::active().clear();
  Tensor a = Tensor::scalar(2.0, true);
  {
    NoGradGuard guard;
    Tensor y = mul(a, a);
    CHECK(Tape::active().size() == 0);
    CHECK_THROWS_AS(Tape::active().backward(y), ValueError);
  }
  Tensor y = mul(a, a);
  CHECK(Tape::active().size() == 1);
  Tape::active().clear();
}

TEST_CASE("matmul matches the naive triple loop") {
  Rng r(5);
  Tensor a = Tensor::randn(Shape{2, 3, 4, 5}, r);
  Tensor b = Tensor::randn(Shape{2, 3, 5, 6}, r);
  Tensor y = matmul(a, b);
  CHECK((y.shape() == Shape{2, 3, 4, 6}));
  auto want = naive::matmul(std::vector<double>(a.data().begin(), a.data().end()),
                            std::vector<double>(b.data().begin(), b.data().end()), 6, 4, 5, 6);
  double worst = 0.0;
  auto got = y.data();
  for (size_t i = 0; i < want.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]));
  CHECK(worst < 1e-12);

  CHECK_THROWS_AS(matmul(a, Tensor::randn(Shape{2, 3, 4, 6}, r)), ShapeError);
  CHECK_THROWS_AS(matmul(a, Tensor::randn(Shape{2, 2, 5, 6}, r)), ShapeError);
}

TEST_CASE("linear matches the naive loop") {
  Rng r(6);
  Tensor x = Tensor::randn(Shape{3, 7}, r);
  Tensor w = Tensor::randn(Shape{4, 7}, r);
  Tensor b = Tensor::randn(Shape{4}, r);
  Tensor y = linear(x, w, b);
  std::vector<double> bias(b.data().begin(), b.data().end());
  auto want = naive::linear(std::vector<double>(x.data().begin(), x.data().end()), 3, 7,
                            std::vector<double>(w.data().begin(), w.data().end()), 4, &bias);
  auto got = y.data();
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

  Tensor no_bias;
  Tensor y2 = linear(x, w, no_bias);
  CHECK(y2.at({0, 0}) == doctest::Approx(y.at({0, 0}) - b.at({0})));
}

TEST_CASE("softmax frozen oracle and invariants") {
  Tensor x = Tensor::from_vector(Shape{1, 2}, {0.0, std::log(3.0)});
  Tensor y = softmax_lastdim(x);
  CHECK(y.at({0, 0}) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.at({0, 1}) == doctest::Approx(0.75).epsilon(1e-12));

  Rng r(8);
  Tensor big = Tensor::randn(Shape{4, 7}, r, 30.0);  // extreme logits stay stable
  Tensor p = softmax_lastdim(big);
  for (int64_t i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 7; ++j) sum += p.at({i, j});
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  Tensor bad = Tensor::from_vector(Shape{2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(softmax_lastdim(bad), ValueError);
}

TEST_CASE("reshape and permute move data correctly") {
  Tensor x = Tensor::from_vector(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = permute(x, {1, 0});
  CHECK((t.shape() == Shape{3, 2}));
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(t.at({j, i}) == x.at({i, j}));

  Tensor r2 = reshape(x, Shape{3, 2});
  CHECK(r2.at({0, 0}) == 1.0);
  CHECK(r2.at({0, 1}) == 2.0);
  CHECK(r2.at({2, 1}) == 6.0);

  Tensor tr = transpose_last2(Tensor::from_vector(Shape{1, 2, 2}, {1, 2, 3, 4}));
  CHECK(tr.at({0, 0, 1}) == 3.0);

  CHECK_THROWS_AS(reshape(x, Shape{4, 2}), ShapeError);
  CHECK_THROWS_AS(permute(x, {0, 0}), ShapeError);
  CHECK_THROWS_AS(permute(x, {0}), ShapeError);
}

TEST_CASE("concat along channels") {
  Tensor a = Tensor::from_vector(Shape{1, 2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_vector(Shape{1, 1, 2}, {9, 8});
  Tensor y = concat_channels(a, b);
  CHECK((y.shape() == Shape{1, 3, 2}));
  CHECK(y.at({0, 0, 0}) == 1.0);
  CHECK(y.at({0, 1, 1}) == 4.0);
  CHECK(y.at({0, 2, 0}) == 9.0);
  CHECK_THROWS_AS(concat_channels(a, Tensor::from_vector(Shape{1, 1, 3}, {1, 2, 3})),
                  ShapeError);
}

TEST_CASE("elementwise ops and reductions") {
  Tensor a = Tensor::from_vector(Shape{2, 2}, {1, -2, 3, -4});
  Tensor b = Tensor::from_vector(Shape{2, 2}, {10, 20, 30, 40});
  CHECK(add(a, b).at({0, 1}) == 18.0);
  CHECK(mul(a, b).at({1, 0}) == 90.0);
  CHECK(scale(a, -1.0).at({1, 1}) == 4.0);
  Tensor rl = relu(a);
  CHECK(rl.at({0, 0}) == 1.0);
  CHECK(rl.at({0, 1}) == 0.0);
  CHECK(sum_all(b).item() == 100.0);

  Tensor x = Tensor::from_vector(Shape{2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Tensor m = mean_lastdims(x, 2);
  CHECK((m.shape() == Shape{2}));
  CHECK(m.at({0}) == doctest::Approx(3.5));
  CHECK(m.at({1}) == doctest::Approx(9.5));
}

TEST_CASE("dropout modes") {
  Rng r(9);
  Tensor x = Tensor::full(Shape{1000}, 3.0);

  Tensor ev = dropout(x, 0.5, false, r);
  CHECK(ev.raw() == x.raw());  // identity, no copy, no randomness consumed
  Rng fresh(9);
  CHECK(r.uniform() == fresh.uniform());

  Rng r2(10);
  Tensor tr = dropout(x, 0.5, true, r2);
  int64_t kept = 0;
  for (double v : tr.data()) {
    CHECK((v == 0.0 || v == doctest::Approx(6.0)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 380);
  CHECK(kept < 620);

  CHECK_THROWS_AS(dropout(x, 1.0, true, r2), ValueError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, r2), ValueError);
}
