#include "nuta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "nuta/error.hpp"
#include "nuta/network.hpp"
#include "nuta/nn_ops.hpp"
#include "nuta/nuta_module.hpp"
#include "nuta/ops.hpp"

namespace nuta {

namespace {

// Random-weighted sum so every output coordinate influences the loss with a
// distinct coefficient (a plain sum would hide transposed-gradient bugs).
Tensor weighted(const Tensor& y, const Tensor& w) { return sum_all(mul(y, w)); }

}  // namespace

GradCheckResult run_gradcheck(const GradCheck& check, double eps,
                              int64_t max_coords_per_tensor, Rng& rng) {
  require<ValueError>(eps > 0.0, "gradcheck: eps must be positive");
  GradCheckResult res;
  res.name = check.name;
  res.tolerance = check.tolerance;

  Tape::active().clear();
  Tensor loss = check.build();
  require<ValueError>(loss.defined() && loss.numel() == 1, "gradcheck '", check.name,
                      "': build() must return a scalar loss");
  Tape::active().backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(check.wrt.size());
  for (const Tensor& t : check.wrt) {
    if (t.has_grad()) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    }
  }
  for (Tensor t : check.wrt) t.zero_grad();
  Tape::active().clear();

  double max_rel = 0.0;
  int64_t checked = 0;
  {
    NoGradGuard guard;
    for (size_t ti = 0; ti < check.wrt.size(); ++ti) {
      Tensor t = check.wrt[ti];
      const int64_t n = t.numel();
      std::vector<int64_t> coords;
      if (n <= max_coords_per_tensor) {
        coords.resize(static_cast<size_t>(n));
        std::iota(coords.begin(), coords.end(), int64_t{0});
      } else {
        coords.reserve(static_cast<size_t>(max_coords_per_tensor));
        for (int64_t k = 0; k < max_coords_per_tensor; ++k)
          coords.push_back(rng.uniform_int(n));
      }
      for (int64_t c : coords) {
        double* slot = &t.raw()->data[static_cast<size_t>(c)];
        const double orig = *slot;
        const double an = analytic[ti][static_cast<size_t>(c)];
        auto probe = [&](double step) {
          *slot = orig + step;
          const double fp = check.build().item();
          *slot = orig - step;
          const double fm = check.build().item();
          *slot = orig;
          const double fd = (fp - fm) / (2.0 * step);
          // A central difference of a double-precision loss cannot resolve
          // gradient differences below a few hundred ulp(loss) / (2 step);
          // keep that band out of the ratio so measurement noise on
          // near-zero gradients does not masquerade as gradient error.
          // Dividing by the check tolerance makes this an absolute
          // tolerance in ratio form.
          const double noise = 512.0 * std::numeric_limits<double>::epsilon() *
                               std::max(std::abs(fp), std::abs(fm)) / (2.0 * step);
          return std::abs(fd - an) /
                 std::max({std::abs(fd), std::abs(an), noise / check.tolerance, 1e-6});
        };
        double rel = probe(eps);
        // A kink (max pool tie, relu zero crossing) inside the probe radius
        // invalidates the central difference; a genuinely wrong gradient
        // stays wrong as the radius shrinks, so retry closer before
        // condemning the coordinate.
        if (rel > check.tolerance) rel = std::min(rel, probe(eps * 0.25));
        if (rel > check.tolerance) rel = std::min(rel, probe(eps * 0.0625));
        max_rel = std::max(max_rel, rel);
        ++checked;
      }
    }
  }

  res.max_rel_err = max_rel;
  res.coords_checked = checked;
  res.passed = checked > 0 && max_rel <= check.tolerance;
  return res;
}

std::vector<GradCheckResult> gradcheck_suite(uint64_t seed) {
  std::vector<GradCheck> checks;

  {
    Rng r(mix_seed(seed, 1));
    Tensor a = Tensor::randn(Shape{2, 3, 4, 5}, r, 1.0, true);
    Tensor b = Tensor::randn(Shape{2, 3, 5, 6}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 3, 4, 6}, r);
    checks.push_back({"matmul", [=] { return weighted(matmul(a, b), w); }, {a, b}});
  }
  {
    Rng r(mix_seed(seed, 2));
    Tensor x = Tensor::randn(Shape{3, 7}, r, 1.0, true);
    Tensor wt = Tensor::randn(Shape{4, 7}, r, 0.5, true);
    Tensor b = Tensor::randn(Shape{4}, r, 0.5, true);
    Tensor w = Tensor::randn(Shape{3, 4}, r);
    checks.push_back(
        {"linear", [=] { return weighted(linear(x, wt, b), w); }, {x, wt, b}});
  }
  {
    Rng r(mix_seed(seed, 3));
    Tensor x = Tensor::randn(Shape{2, 3, 5}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 3, 5}, r);
    checks.push_back(
        {"softmax_lastdim", [=] { return weighted(softmax_lastdim(x), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 4));
    Tensor x = Tensor::randn(Shape{2, 3, 4}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{4, 6}, r);
    checks.push_back({"reshape_permute",
                      [=] {
                        return weighted(
                            reshape(permute(x, {2, 0, 1}), Shape{4, 6}), w);
                      },
                      {x}});
  }
  {
    Rng r(mix_seed(seed, 5));
    Tensor x = Tensor::randn(Shape{2, 3, 4}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 4, 3}, r);
    checks.push_back(
        {"transpose_last2", [=] { return weighted(transpose_last2(x), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 6));
    Tensor a = Tensor::randn(Shape{2, 3, 2, 2, 2}, r, 1.0, true);
    Tensor b = Tensor::randn(Shape{2, 5, 2, 2, 2}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 8, 2, 2, 2}, r);
    checks.push_back({"concat_channels",
                      [=] { return weighted(concat_channels(a, b), w); },
                      {a, b}});
  }
  {
    Rng r(mix_seed(seed, 7));
    Tensor a = Tensor::randn(Shape{2, 3, 4}, r, 1.0, true);
    Tensor b = Tensor::randn(Shape{2, 3, 4}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 3, 4}, r);
    checks.push_back({"add_mul_scale",
                      [=] { return weighted(scale(add(a, mul(a, b)), 0.5), w); },
                      {a, b}});
  }
  {
    Rng r(mix_seed(seed, 8));
    Tensor x = Tensor::randn(Shape{4, 9}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{4, 9}, r);
    checks.push_back({"relu", [=] { return weighted(relu(x), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 9));
    Tensor x = Tensor::randn(Shape{3, 5}, r, 1.0, true);
    checks.push_back({"sum_all_square", [=] { return sum_all(mul(x, x)); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 10));
    Tensor x = Tensor::randn(Shape{2, 3, 4, 5}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 3}, r);
    checks.push_back(
        {"mean_lastdims", [=] { return weighted(mean_lastdims(x, 2), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 11));
    Tensor x = Tensor::randn(Shape{3, 4, 5}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{3, 4, 5}, r);
    checks.push_back({"dropout_train",
                      [=] {
                        Rng dr(4242);  // same mask on every evaluation
                        return weighted(dropout(x, 0.3, true, dr), w);
                      },
                      {x}});
  }
  {
    Rng r(mix_seed(seed, 12));
    Tensor x = Tensor::randn(Shape{2, 3, 4, 6, 6}, r, 1.0, true);
    Conv3dParams p = Conv3dParams::make(3, 4, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, 1,
                                        true, TemporalPad::zero, r);
    Tensor w = Tensor::randn(Shape{2, 4, 4, 3, 3}, r);
    checks.push_back({"conv3d_zero_pad",
                      [=] { return weighted(conv3d(x, p), w); },
                      {x, p.weight, p.bias}});
  }
  {
    Rng r(mix_seed(seed, 13));
    Tensor x = Tensor::randn(Shape{1, 4, 5, 4, 4}, r, 1.0, true);
    Conv3dParams p = Conv3dParams::make(4, 6, {3, 1, 1}, {1, 1, 1}, {1, 0, 0}, 2,
                                        false, TemporalPad::replicate, r);
    Tensor w = Tensor::randn(Shape{1, 6, 5, 4, 4}, r);
    checks.push_back({"conv3d_replicate_grouped",
                      [=] { return weighted(conv3d(x, p), w); },
                      {x, p.weight}});
  }
  {
    Rng r(mix_seed(seed, 14));
    Tensor x = Tensor::randn(Shape{1, 2, 6, 5, 5}, r, 1.0, true);
    Conv3dParams p = Conv3dParams::make(2, 3, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}, 1,
                                        true, TemporalPad::zero, r);
    Tensor w = Tensor::randn(Shape{1, 3, 3, 5, 5}, r);
    checks.push_back({"conv3d_strided_temporal",
                      [=] { return weighted(conv3d(x, p), w); },
                      {x, p.weight, p.bias}});
  }
  {
    Rng r(mix_seed(seed, 15));
    Tensor x = Tensor::randn(Shape{2, 3, 6, 2, 2}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 3, 3, 2, 2}, r);
    checks.push_back(
        {"temporal_maxpool2", [=] { return weighted(temporal_maxpool2(x), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 16));
    Tensor x = Tensor::randn(Shape{2, 3, 2, 6, 6}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 3, 2, 3, 3}, r);
    checks.push_back(
        {"spatial_pool_to", [=] { return weighted(spatial_pool_to(x, 3, 3), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 17));
    Tensor x = Tensor::randn(Shape{1, 2, 2, 4, 4}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{1, 2, 2, 2, 2}, r);
    checks.push_back(
        {"spatial_avgpool2", [=] { return weighted(spatial_avgpool2(x), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 18));
    Tensor x = Tensor::randn(Shape{2, 4, 3, 4, 4}, r, 1.0, true);
    Tensor w = Tensor::randn(Shape{2, 4}, r);
    checks.push_back(
        {"global_avgpool", [=] { return weighted(global_avgpool(x), w); }, {x}});
  }
  {
    Rng r(mix_seed(seed, 19));
    Tensor x = Tensor::randn(Shape{3, 4, 2, 3, 3}, r, 1.0, true);
    BatchNormParams bp = BatchNormParams::make(4);
    {
      std::vector<double> v(4);
      for (auto& e : v) e = r.uniform(0.5, 1.5);
      bp.scale.overwrite_data(v);
      for (auto& e : v) e = 0.3 * r.normal();
      bp.shift.overwrite_data(v);
    }
    Tensor w = Tensor::randn(Shape{3, 4, 2, 3, 3}, r);
    checks.push_back({"batchnorm3d_train",
                      [=]() mutable { return weighted(batchnorm3d(x, bp, true), w); },
                      {x, bp.scale, bp.shift}});
  }
  {
    Rng r(mix_seed(seed, 20));
    Tensor x = Tensor::randn(Shape{3, 4, 2, 3, 3}, r, 1.0, true);
    BatchNormParams bp = BatchNormParams::make(4);
    {
      std::vector<double> v(4);
      for (auto& e : v) e = r.uniform(0.5, 1.5);
      bp.scale.overwrite_data(v);
      for (auto& e : v) e = 0.3 * r.normal();
      bp.shift.overwrite_data(v);
      for (auto& e : v) e = r.normal();
      bp.running_mean.overwrite_data(v);
      for (auto& e : v) e = r.uniform(0.5, 2.0);
      bp.running_var.overwrite_data(v);
    }
    Tensor w = Tensor::randn(Shape{3, 4, 2, 3, 3}, r);
    checks.push_back({"batchnorm3d_eval",
                      [=]() mutable { return weighted(batchnorm3d(x, bp, false), w); },
                      {x, bp.scale, bp.shift}});
  }
  {
    Rng r(mix_seed(seed, 21));
    Tensor logits = Tensor::randn(Shape{5, 7}, r, 1.0, true);
    std::vector<int64_t> labels{0, 3, 6, 2, 1};
    checks.push_back(
        {"cross_entropy", [=] { return cross_entropy(logits, labels); }, {logits}});
  }
  {
    Rng r(mix_seed(seed, 22));
    Tensor x = Tensor::randn(Shape{2, 8, 4, 3, 3}, r, 1.0, true);
    HeadLayout layout{4};
    Tensor w1 = Tensor::randn(Shape{2, 4, 4, 18}, r);
    Tensor w2 = Tensor::randn(Shape{2, 8, 4, 3, 3}, r);
    checks.push_back({"gamma_roundtrip",
                      [=] {
                        Tensor g = mul(gamma(x, layout), w1);
                        return weighted(gamma_inverse(g, 8, 3, 3), w2);
                      },
                      {x}});
  }
  {
    Rng r(mix_seed(seed, 23));
    Tensor f = Tensor::randn(Shape{1, 4, 4, 3, 3}, r, 1.0, true);
    Tensor f_res = Tensor::randn(Shape{1, 4, 4, 3, 3}, r, 1.0, true);
    NutaModuleParams mp = NutaModuleParams::make(4, 2, 2, r);
    Tensor w1 = Tensor::randn(Shape{1, 4, 2, 3, 3}, r);
    Tensor w2 = Tensor::randn(Shape{1, 4, 2, 3, 3}, r);
    checks.push_back({"nuta_module",
                      [=] {
                        auto fwd = nuta_forward(f, mp);
                        Tensor sync = temporal_sync(f_res, fwd.second, mp);
                        return add(weighted(fwd.first, w1), weighted(sync, w2));
                      },
                      {f, f_res, mp.phi.weight, mp.theta.weight, mp.delta.weight,
                       mp.zeta.weight, mp.compress.weight}});
  }
  const FusionKind fusions[] = {FusionKind::concat, FusionKind::sum,
                                FusionKind::nonlocal};
  for (size_t fi = 0; fi < 3; ++fi) {
    NetworkConfig cfg;
    cfg.classes = 4;
    cfg.input_channels = 3;
    cfg.input_frames = 4;
    cfg.input_size = 8;
    cfg.stem_channels = 4;
    cfg.stem_temporal_kernel = 1;
    cfg.stem_spatial_kernel = 3;
    cfg.stem_spatial_stride = 2;
    cfg.stem_pool = false;
    StageConfig s;
    s.index = 2;
    s.blocks = 1;
    s.channels = 8;
    cfg.stages = {s};
    cfg.nuta_stages = {2};
    cfg.nuta_heads = 2;
    cfg.nuta_groups = 2;
    cfg.fusion = fusions[fi];
    cfg.head_input = HeadInput::both;
    cfg.dropout = 0.0;
    cfg.validate();

    auto net = std::make_shared<TwoBranchNet>(cfg, mix_seed(seed, 24 + fi));
    Rng r(mix_seed(seed, 27 + fi));
    Tensor clip = Tensor::rand_uniform(Shape{2, 3, 4, 8, 8}, r, 0.0, 1.0, true);
    std::vector<int64_t> labels{1, 3};

    std::vector<Tensor> wrt{clip};
    const char* picks[] = {"stem.conv.weight",   "bn1.scale",
                           "phi.weight",         "zeta.weight",
                           "fuse2.",             "compress.weight",
                           "head.linear.weight", "head.linear.bias"};
    for (auto& [name, t] : net->parameters()) {
      // The nonlocal output projection starts at zero, which blocks every
      // gradient through the attention path; nudge it off zero so the check
      // exercises query/key/value too.
      if (fusions[fi] == FusionKind::nonlocal &&
          name.find("fuse2.out.weight") != std::string::npos) {
        std::vector<double> v(static_cast<size_t>(t.numel()));
        for (auto& e : v) e = 0.1 * r.normal();
        t.overwrite_data(v);
      }
      for (const char* pat : picks) {
        if (name.find(pat) != std::string::npos) {
          wrt.push_back(t);
          break;
        }
      }
    }
    require<ValueError>(wrt.size() >= 8,
                        "gradcheck: network parameter selection came up short");
    std::string name = std::string("two_branch_net_") + to_string(fusions[fi]);
    checks.push_back({name,
                      [=] {
                        Rng unused(0);
                        auto out = net->forward(clip, false, unused);
                        return cross_entropy(out.logits, labels);
                      },
                      wrt, 1e-3});
  }

  std::vector<GradCheckResult> results;
  results.reserve(checks.size());
  Rng coord_rng(mix_seed(seed, 0x5EED));
  for (const GradCheck& c : checks)
    results.push_back(run_gradcheck(c, 1e-5, 24, coord_rng));
  return results;
}

}  // namespace nuta
