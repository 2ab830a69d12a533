#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nuta/checks.hpp"
#include "nuta/error.hpp"
#include "nuta/flops.hpp"
#include "nuta/gradcheck.hpp"
#include "nuta/heatmap.hpp"
#include "nuta/mac_counter.hpp"
#include "nuta/network.hpp"
#include "nuta/serialize.hpp"
#include "support/micro_config.hpp"

using namespace nuta;

namespace {

// Runs one eval-mode forward with the instrumented kernels and returns the
// multiply-accumulate tally.
uint64_t measure_macs(const NetworkConfig& cfg, int64_t batch) {
  TwoBranchNet net(cfg, 5);
  Rng rng(17);
  Tensor clip = Tensor::rand_uniform(
      Shape{batch, cfg.input_channels, cfg.input_frames, cfg.input_size, cfg.input_size},
      rng, 0.0, 1.0);
  NoGradGuard guard;
  Rng unused(0);
  macs::ScopedCount scope;
  net.forward(clip, false, unused);
  return macs::count();
}

NetworkConfig bottleneck_config() {
  NetworkConfig cfg;
  cfg.classes = 4;
  cfg.input_channels = 3;
  cfg.input_frames = 4;
  cfg.input_size = 16;
  cfg.stem_channels = 4;
  cfg.stem_temporal_kernel = 3;
  cfg.stem_pool = true;
  StageConfig s2;
  s2.index = 2;
  s2.blocks = 2;  // two blocks so the alternating temporal extents both appear
  s2.channels = 8;
  s2.mid_channels = 2;
  s2.block = BlockKind::bottleneck;
  StageConfig s3;
  s3.index = 3;
  s3.blocks = 1;
  s3.channels = 16;
  s3.mid_channels = 4;
  s3.spatial_stride = 2;
  s3.block = BlockKind::bottleneck;
  cfg.stages = {s2, s3};
  cfg.nuta_stages = {3};
  cfg.nuta_heads = 4;
  cfg.nuta_groups = 4;
  cfg.dropout = 0.0;
  cfg.validate();
  return cfg;
}

NetworkConfig uniform_only_strided_config() {
  NetworkConfig cfg;
  cfg.classes = 4;
  cfg.input_channels = 3;
  cfg.input_frames = 8;
  cfg.input_size = 16;
  cfg.stem_channels = 4;
  StageConfig s2;
  s2.index = 2;
  s2.blocks = 1;
  s2.channels = 8;
  StageConfig s3;
  s3.index = 3;
  s3.blocks = 1;
  s3.channels = 16;
  s3.spatial_stride = 2;
  s3.temporal_stride = 2;
  cfg.stages = {s2, s3};
  cfg.nuta_stages = {};
  cfg.dropout = 0.0;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("instrumented kernels match the analytic cost walk") {
  for (FusionKind kind : {FusionKind::nonlocal, FusionKind::sum, FusionKind::concat}) {
    for (HeadInput head : {HeadInput::both, HeadInput::uniform_only}) {
      NetworkConfig cfg = micro_config(kind, head);
      CostReport report = count_flops(cfg, 2, cfg.input_frames, cfg.input_size);
      CHECK(measure_macs(cfg, 2) == report.total_macs);
    }
  }
  {
    NetworkConfig cfg = bottleneck_config();
    CostReport report = count_flops(cfg, 1, cfg.input_frames, cfg.input_size);
    CHECK(measure_macs(cfg, 1) == report.total_macs);
  }
  {
    NetworkConfig cfg = uniform_only_strided_config();
    CostReport report = count_flops(cfg, 2, cfg.input_frames, cfg.input_size);
    CHECK(measure_macs(cfg, 2) == report.total_macs);
    CHECK(report.nuta_macs == 0);
    CHECK(report.nuta_feature.rank() == 0);
  }
}

TEST_CASE("the cost walk traces shapes and group totals") {
  NetworkConfig cfg = micro_config();
  CostReport r = count_flops(cfg, 2, 4, 8);

  CHECK(r.total_macs == r.stem_macs + r.backbone_macs + r.nuta_macs + r.head_macs);
  CHECK(r.stem_macs > 0);
  CHECK(r.nuta_macs > 0);
  CHECK(r.head_macs > 0);
  CHECK(r.gflops_mul_add() == doctest::Approx(2.0 * r.gflops_fused()));

  REQUIRE(r.stages.size() == 1);
  CHECK(r.stages[0].index == 2);
  CHECK(r.stages[0].nuta);
  CHECK(r.stages[0].in[2] == 4);
  CHECK(r.stages[0].out[2] == 2);  // the module halves the timeline
  CHECK((r.uniform_feature == Shape{2, 8, 2, 4, 4}));
  CHECK((r.nuta_feature == Shape{2, 8, 2, 4, 4}));

  uint64_t layer_sum = 0;
  for (const LayerCost& l : r.layers) layer_sum += l.macs;
  CHECK(layer_sum == r.total_macs);

  // An odd timeline cannot be pooled by the module stage.
  CHECK_THROWS(count_flops(cfg, 1, 5, 8));
  // Geometry that breaks the stem's spatial stride is rejected too.
  CHECK_THROWS(count_flops(cfg, 1, 4, 0));

  std::string table = format_report(r, "micro fixture");
  CHECK(table.find("micro fixture") != std::string::npos);
  CHECK(table.find("stem") != std::string::npos);
  CHECK(table.find("total") != std::string::npos);

  std::string csv = report_csv(r);
  CHECK(csv.rfind("layer,group,output,macs\n", 0) == 0);
  int64_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == static_cast<int64_t>(r.layers.size()) + 1);
}

TEST_CASE("heatmap text and image export round trips") {
  Rng rng(23);
  Tensor logits = Tensor::rand_uniform(Shape{2, 2, 3, 4}, rng, -2.0, 2.0);
  ProjectionMap m{softmax_lastdim(logits)};

  HeatmapExport hm = export_heatmap(m, 1, "tooling_heatmap");
  REQUIRE(hm.text_paths.size() == 2);
  REQUIRE(hm.image_paths.size() == 2);
  CHECK(hm.min_value < hm.max_value);

  for (int64_t h = 0; h < 2; ++h) {
    auto grid = read_heatmap_text(hm.text_paths[static_cast<size_t>(h)]);
    REQUIRE(grid.size() == 3);
    for (int64_t s = 0; s < 3; ++s) {
      REQUIRE(grid[static_cast<size_t>(s)].size() == 4);
      for (int64_t t = 0; t < 4; ++t)
        CHECK(grid[static_cast<size_t>(s)][static_cast<size_t>(t)] ==
              m.values.at({1, h, s, t}));
    }
  }

  // Binary PGM header: magic, extents, max value, then rows*cols bytes.
  std::ifstream pgm(hm.image_paths[0], std::ios::binary);
  REQUIRE(pgm.good());
  std::string magic, dims1, dims2, maxv;
  pgm >> magic >> dims1 >> dims2 >> maxv;
  CHECK(magic == "P5");
  CHECK(dims1 == "4");  // width = source steps
  CHECK(dims2 == "3");
  CHECK(maxv == "255");
  pgm.get();
  std::vector<char> bytes(12);
  pgm.read(bytes.data(), 12);
  CHECK(pgm.gcount() == 12);

  // A constant map renders flat mid-gray.
  ProjectionMap flat{Tensor::full(Shape{1, 1, 2, 2}, 0.5)};
  HeatmapExport fhm = export_heatmap(flat, 0, "tooling_heatmap_flat");
  std::ifstream fpgm(fhm.image_paths[0], std::ios::binary);
  fpgm >> magic >> dims1 >> dims2 >> maxv;
  fpgm.get();
  std::vector<unsigned char> fb(4);
  fpgm.read(reinterpret_cast<char*>(fb.data()), 4);
  for (unsigned char b : fb) CHECK(static_cast<int>(b) == 128);

  CHECK_THROWS_AS(export_heatmap(m, 5, "tooling_heatmap_bad"), ValueError);
  CHECK_THROWS_AS(read_heatmap_text("no_such_heatmap.txt"), IoError);

  for (const auto& p : hm.text_paths) std::remove(p.c_str());
  for (const auto& p : hm.image_paths) std::remove(p.c_str());
  for (const auto& p : fhm.text_paths) std::remove(p.c_str());
  for (const auto& p : fhm.image_paths) std::remove(p.c_str());
}

TEST_CASE("checkpoint container is strict about its contents") {
  Rng rng(3);
  std::string path = "tooling_ckpt_test.bin";
  std::vector<std::pair<std::string, Tensor>> items;
  items.emplace_back("a", Tensor::rand_uniform(Shape{2, 3}, rng, -1.0, 1.0));
  items.emplace_back("b", Tensor::rand_uniform(Shape{4}, rng, -1.0, 1.0));
  save_tensors(path, items);

  auto loaded = load_tensors(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].first == "a");
  CHECK((loaded[0].second.shape() == Shape{2, 3}));
  for (int64_t i = 0; i < 4; ++i)
    CHECK(loaded[1].second.data()[static_cast<size_t>(i)] ==
          items[1].second.data()[static_cast<size_t>(i)]);

  // load_into: matching targets succeed and values land in place.
  std::vector<std::pair<std::string, Tensor>> targets;
  targets.emplace_back("a", Tensor::zeros(Shape{2, 3}));
  targets.emplace_back("b", Tensor::zeros(Shape{4}));
  load_into(path, targets);
  CHECK(targets[0].second.data()[0] == items[0].second.data()[0]);

  // Missing target name in the file.
  std::vector<std::pair<std::string, Tensor>> missing;
  missing.emplace_back("a", Tensor::zeros(Shape{2, 3}));
  missing.emplace_back("c", Tensor::zeros(Shape{4}));
  CHECK_THROWS_AS(load_into(path, missing), ValueError);

  // Extents mismatch.
  std::vector<std::pair<std::string, Tensor>> wrong;
  wrong.emplace_back("a", Tensor::zeros(Shape{3, 2}));
  wrong.emplace_back("b", Tensor::zeros(Shape{4}));
  CHECK_THROWS_AS(load_into(path, wrong), ValueError);

  // A file tensor nothing asked for is an error, not silently ignored.
  std::vector<std::pair<std::string, Tensor>> partial;
  partial.emplace_back("a", Tensor::zeros(Shape{2, 3}));
  CHECK_THROWS_AS(load_into(path, partial), ValueError);

  // Truncated file.
  {
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      std::ostringstream os;
      os << in.rdbuf();
      bytes = os.str();
    }
    std::ofstream out("tooling_ckpt_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_tensors("tooling_ckpt_trunc.bin"), IoError);

  std::remove(path.c_str());
  std::remove("tooling_ckpt_trunc.bin");
}

TEST_CASE("gradient checks cover every differentiable operation") {
  for (const GradCheckResult& r : gradcheck_suite(1234)) {
    CAPTURE(r.name);
    CAPTURE(r.max_rel_err);
    CHECK(r.passed);
  }
}

TEST_CASE("structural property checks hold") {
  for (const CheckResult& r : run_property_checks(321)) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.passed);
  }
}
