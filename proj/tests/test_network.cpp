#include <cmath>
#include <cstdio>
#include <string>

#include "doctest.h"
#include "nuta/error.hpp"
#include "nuta/network.hpp"
#include "support/micro_config.hpp"

using namespace nuta;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  auto da = a.data();
  auto db = b.data();
  for (size_t i = 0; i < da.size(); ++i)
    if (da[i] != db[i]) return false;
  return true;
}

Tensor random_clip(Shape shape, uint64_t seed) {
  Rng rng(seed);
  return Tensor::rand_uniform(shape, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("forward shapes and map extents") {
  NetworkConfig cfg = micro_config();
  TwoBranchNet net(cfg, 7);
  CHECK(net.parameter_count() > 0);
  CHECK(net.is_nuta_stage(2));
  CHECK_FALSE(net.is_nuta_stage(3));

  Tensor clip = random_clip(Shape{2, 3, 4, 8, 8}, 11);
  Rng drop(1);
  ForwardResult r = net.forward(clip, false, drop);

  CHECK((r.logits.shape() == Shape{2, 4}));
  for (double v : r.logits.data()) CHECK(std::isfinite(v));

  REQUIRE(r.maps.size() == 1);
  const ProjectionMap& m = r.maps[0];
  CHECK(m.batch() == 2);
  CHECK(m.heads() == 2);
  CHECK(m.target_steps() == 2);  // stem keeps T=4, the module halves it
  CHECK(m.source_steps() == 4);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t h = 0; h < 2; ++h)
      for (int64_t s = 0; s < 2; ++s) {
        double row = 0.0;
        for (int64_t t = 0; t < 4; ++t) row += m.values.at({n, h, s, t});
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
      }

  CHECK((r.uniform_feature.shape() == Shape{2, 8, 2, 4, 4}));
  CHECK((r.nuta_feature.shape() == Shape{2, 8, 2, 4, 4}));

  CHECK_THROWS_AS(net.forward(random_clip(Shape{2, 3, 4, 8}, 1), false, drop), ShapeError);
  CHECK_THROWS_AS(net.forward(random_clip(Shape{2, 5, 4, 8, 8}, 1), false, drop),
                  ShapeError);
}

TEST_CASE("two module stages quarter the timeline") {
  NetworkConfig cfg;
  cfg.classes = 4;
  cfg.input_channels = 3;
  cfg.input_frames = 8;
  cfg.input_size = 8;
  cfg.stem_channels = 4;
  cfg.stem_temporal_kernel = 1;
  StageConfig s2;
  s2.index = 2;
  s2.blocks = 1;
  s2.channels = 8;
  StageConfig s3;
  s3.index = 3;
  s3.blocks = 1;
  s3.channels = 16;
  s3.spatial_stride = 2;
  cfg.stages = {s2, s3};
  cfg.nuta_stages = {2, 3};
  cfg.nuta_heads = 2;
  cfg.nuta_groups = 2;
  cfg.dropout = 0.0;
  cfg.validate();

  TwoBranchNet net(cfg, 3);
  Rng drop(1);
  ForwardResult r = net.forward(random_clip(Shape{1, 3, 8, 8, 8}, 21), false, drop);

  REQUIRE(r.maps.size() == 2);
  CHECK(r.maps[0].target_steps() == 4);
  CHECK(r.maps[0].source_steps() == 8);
  CHECK(r.maps[1].target_steps() == 2);
  CHECK(r.maps[1].source_steps() == 4);
  CHECK((r.uniform_feature.shape() == Shape{1, 16, 2, 2, 2}));
  CHECK((r.nuta_feature.shape() == Shape{1, 16, 2, 2, 2}));
  CHECK((r.logits.shape() == Shape{1, 4}));
}

TEST_CASE("every fusion and head wiring runs") {
  Tensor clip = random_clip(Shape{2, 3, 4, 8, 8}, 31);
  for (FusionKind kind : {FusionKind::nonlocal, FusionKind::sum, FusionKind::concat}) {
    for (HeadInput head : {HeadInput::both, HeadInput::uniform_only}) {
      TwoBranchNet net(micro_config(kind, head), 9);
      Rng drop(1);
      ForwardResult r = net.forward(clip, false, drop);
      CHECK((r.logits.shape() == Shape{2, 4}));
      for (double v : r.logits.data()) CHECK(std::isfinite(v));
      CHECK(r.maps.size() == 1);
      CHECK(r.nuta_feature.defined());
      Rng drop2(1);
      ForwardResult t = net.forward(clip, true, drop2);  // train mode also runs
      CHECK((t.logits.shape() == Shape{2, 4}));
    }
  }
}

TEST_CASE("cross-attention fusion starts as the identity") {
  TwoBranchNet net(micro_config(FusionKind::nonlocal), 17);
  Rng rng(5);
  Tensor u = Tensor::rand_uniform({1, 8, 4, 4, 4}, rng, -1.0, 1.0);
  // the first module stage fuses against the pooled stage input, which still
  // carries the stem's channel count
  Tensor f = Tensor::rand_uniform({1, 4, 4, 4, 4}, rng, -1.0, 1.0);
  NoGradGuard guard;
  Tensor fused = net.fuse(2, u, f);
  CHECK(bitwise_equal(fused, u));

  // concat and sum fusion mix the branches from the start
  TwoBranchNet cnet(micro_config(FusionKind::concat), 17);
  CHECK_FALSE(bitwise_equal(cnet.fuse(2, u, f), u));
}

TEST_CASE("seeding is deterministic") {
  NetworkConfig cfg = micro_config();
  TwoBranchNet a(cfg, 42);
  TwoBranchNet b(cfg, 42);
  TwoBranchNet c(cfg, 43);

  REQUIRE(a.parameters().size() == b.parameters().size());
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].first == b.parameters()[i].first);
    CHECK(bitwise_equal(a.parameters()[i].second, b.parameters()[i].second));
  }
  bool any_differs = false;
  for (size_t i = 0; i < a.parameters().size(); ++i)
    any_differs = any_differs || !bitwise_equal(a.parameters()[i].second,
                                                c.parameters()[i].second);
  CHECK(any_differs);

  Tensor clip = random_clip(Shape{1, 3, 4, 8, 8}, 77);
  Rng d1(1), d2(1);
  CHECK(bitwise_equal(a.forward(clip, false, d1).logits,
                      b.forward(clip, false, d2).logits));
}

TEST_CASE("checkpoint round trip restores the forward pass") {
  std::string path = "ckpt_roundtrip_test.bin";
  NetworkConfig cfg = micro_config();
  Tensor clip = random_clip(Shape{2, 3, 4, 8, 8}, 55);

  TwoBranchNet net(cfg, 8);
  {
    // Train-mode pass moves the batch-norm running statistics so buffers are
    // restored too, not just weights.
    Rng drop(1);
    net.forward(clip, true, drop);
  }
  Rng d1(1);
  Tensor want = net.forward(clip, false, d1).logits;
  net.save(path);

  TwoBranchNet other(cfg, 999);
  Rng d2(1);
  CHECK_FALSE(bitwise_equal(other.forward(clip, false, d2).logits, want));
  other.load(path);
  Rng d3(1);
  CHECK(bitwise_equal(other.forward(clip, false, d3).logits, want));

  NetworkConfig wide = micro_config();
  wide.stem_channels = 8;
  TwoBranchNet mismatched(wide, 1);
  CHECK_THROWS_AS(mismatched.load(path), ValueError);
  CHECK_THROWS_AS(net.load("no_such_checkpoint.bin"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("module stages reject stage temporal strides") {
  NetworkConfig cfg = micro_config();
  cfg.stages[0].temporal_stride = 2;
  cfg.validate();  // fine for a uniform-only cost fixture
  CHECK_THROWS_AS(TwoBranchNet(cfg, 1), ConfigError);

  TwoBranchNet net(micro_config(), 1);
  CHECK_THROWS_AS(net.module_at(3), ValueError);
  CHECK_NOTHROW(net.module_at(2));
}
