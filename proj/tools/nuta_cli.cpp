#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nuta/checks.hpp"
#include "nuta/config.hpp"
#include "nuta/dataset.hpp"
#include "nuta/error.hpp"
#include "nuta/flops.hpp"
#include "nuta/gradcheck.hpp"
#include "nuta/heatmap.hpp"
#include "nuta/network.hpp"
#include "nuta/parallel.hpp"
#include "nuta/train.hpp"

namespace {

uint64_t default_seed() {
  if (const char* env = std::getenv("NUTA_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw nuta::ConfigError("NUTA_SEED is not an unsigned integer: " +
                              std::string(env));
    }
  }
  return 1234;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-uniform temporal aggregation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = auto / NUTA_THREADS)");

  uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck",
                                "verify analytic gradients against central "
                                "finite differences for every operation");
  gc->add_option("--seed", gc_seed, "randomization seed (default NUTA_SEED or 1234)");

  uint64_t inv_seed = 0;
  auto* inv = app.add_subcommand(
      "invariants", "check structural properties of the aggregation machinery");
  inv->add_option("--seed", inv_seed, "randomization seed (default NUTA_SEED or 1234)");

  std::string gd_out;
  int64_t gd_clips = 0, gd_classes = 8, gd_frames = 8, gd_size = 32, gd_informative = 2;
  std::string gd_split = "train";
  uint64_t gd_seed = 0;
  auto* gd = app.add_subcommand("gen-data", "generate a synthetic glyph-spotting dataset");
  gd->add_option("--out", gd_out, "output file")->required();
  gd->add_option("--clips", gd_clips, "number of clips")->required();
  gd->add_option("--classes", gd_classes, "glyph classes (at most 8)");
  gd->add_option("--frames", gd_frames, "frames per clip");
  gd->add_option("--size", gd_size, "frame height and width");
  gd->add_option("--informative", gd_informative, "beacon-marked frames per clip");
  gd->add_option("--split", gd_split, "train or val (disjoint sample streams)")
      ->check(CLI::IsMember({"train", "val"}));
  gd->add_option("--seed", gd_seed, "generator seed (default NUTA_SEED or 1234)");

  std::string tr_config, tr_tconfig, tr_data, tr_val, tr_out;
  uint64_t tr_seed = 0;
  bool tr_quiet = false;
  auto* tr = app.add_subcommand("train", "train a two-branch network");
  tr->add_option("--config", tr_config, "network config file")->required();
  tr->add_option("--train-config", tr_tconfig, "training config file")->required();
  tr->add_option("--data", tr_data, "training dataset")->required();
  tr->add_option("--val-data", tr_val, "validation dataset")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--seed", tr_seed, "override the training config seed");
  tr->add_flag("--quiet", tr_quiet, "suppress progress lines on stderr");

  std::string ev_config, ev_ckpt, ev_data;
  int64_t ev_batch = 32;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--config", ev_config, "network config file")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset")->required();
  ev->add_option("--batch", ev_batch, "evaluation batch size");

  std::string fl_config, fl_csv, fl_title;
  int64_t fl_batch = 1, fl_frames = 0, fl_size = 0;
  auto* fl = app.add_subcommand("flops", "analytic layer-by-layer cost table");
  fl->add_option("--config", fl_config, "network config file")->required();
  fl->add_option("--batch", fl_batch, "batch size");
  fl->add_option("--frames", fl_frames, "clip frames (0 = config value)");
  fl->add_option("--size", fl_size, "clip height and width (0 = config value)");
  fl->add_option("--csv", fl_csv, "also write the table as CSV");
  fl->add_option("--title", fl_title, "table heading (default: config path)");

  std::string vz_config, vz_ckpt, vz_data, vz_out = "map";
  int64_t vz_index = 0, vz_module = 0;
  uint64_t vz_seed = 0;
  auto* vz = app.add_subcommand(
      "viz", "export a clip's projection maps as text grids and PGM images");
  vz->add_option("--config", vz_config, "network config file")->required();
  vz->add_option("--ckpt", vz_ckpt, "checkpoint (omit for a freshly seeded net)");
  vz->add_option("--data", vz_data, "dataset")->required();
  vz->add_option("--index", vz_index, "clip index");
  vz->add_option("--module", vz_module, "module index in stage order");
  vz->add_option("--out", vz_out, "output path prefix");
  vz->add_option("--seed", vz_seed, "net seed when no checkpoint is given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) nuta::set_num_threads(threads);

    if (gc->parsed()) {
      nuta::set_finite_checks(true);
      uint64_t seed = gc->count("--seed") ? gc_seed : default_seed();
      auto results = nuta::gradcheck_suite(seed);
      bool all = true;
      for (const auto& r : results) {
        std::cout << (r.passed ? "PASS" : "FAIL") << "  " << std::left
                  << std::setw(26) << r.name << " max rel err "
                  << nuta::format_double(r.max_rel_err) << " over "
                  << r.coords_checked << " coords (tol "
                  << nuta::format_double(r.tolerance) << ")\n";
        all = all && r.passed;
      }
      std::cout << (all ? "gradcheck: all passed" : "gradcheck: FAILURES") << "\n";
      return all ? 0 : 1;
    }

    if (inv->parsed()) {
      nuta::set_finite_checks(true);
      uint64_t seed = inv->count("--seed") ? inv_seed : default_seed();
      auto results = nuta::run_property_checks(seed);
      bool all = true;
      for (const auto& r : results) {
        std::cout << (r.passed ? "PASS" : "FAIL") << "  " << std::left
                  << std::setw(34) << r.name << " " << r.detail << "\n";
        all = all && r.passed;
      }
      std::cout << (all ? "invariants: all passed" : "invariants: FAILURES") << "\n";
      return all ? 0 : 1;
    }

    if (gd->parsed()) {
      nuta::DatasetMeta meta;
      meta.num_clips = gd_clips;
      meta.classes = gd_classes;
      meta.frames = gd_frames;
      meta.height = gd_size;
      meta.width = gd_size;
      meta.informative = gd_informative;
      uint64_t seed = gd->count("--seed") ? gd_seed : default_seed();
      nuta::Split split = gd_split == "val" ? nuta::Split::val : nuta::Split::train;
      nuta::Dataset ds = nuta::generate_dataset(meta, seed, split);
      nuta::save_dataset(gd_out, ds);
      std::cout << "wrote " << ds.meta.num_clips << " clips (" << ds.meta.classes
                << " classes, " << ds.meta.frames << "x" << ds.meta.height << "x"
                << ds.meta.width << ", " << ds.meta.informative
                << " informative) to " << gd_out << "\n";
      return 0;
    }

    if (tr->parsed()) {
      nuta::NetworkConfig net_cfg = nuta::NetworkConfig::from_file(tr_config);
      nuta::TrainConfig train_cfg = nuta::TrainConfig::from_file(tr_tconfig);
      if (tr->count("--seed")) train_cfg.seed = tr_seed;
      nuta::Dataset train_ds = nuta::load_dataset(tr_data);
      nuta::Dataset val_ds = nuta::load_dataset(tr_val);
      nuta::TwoBranchNet net(net_cfg, train_cfg.seed);
      std::ostream* progress = tr_quiet ? nullptr : &std::cerr;
      nuta::TrainResult res =
          nuta::train(net, train_ds, val_ds, train_cfg, tr_out, progress);
      std::cout << "best_val_acc " << nuta::format_double(res.best_val_acc)
                << " at epoch " << res.best_epoch << "\n";
      std::cout << "metrics " << res.metrics_path << "\n";
      std::cout << "best_ckpt " << res.best_ckpt_path << "\n";
      std::cout << "last_ckpt " << res.last_ckpt_path << "\n";
      return 0;
    }

    if (ev->parsed()) {
      nuta::NetworkConfig cfg = nuta::NetworkConfig::from_file(ev_config);
      nuta::TwoBranchNet net(cfg, 0);
      net.load(ev_ckpt);
      nuta::Dataset ds = nuta::load_dataset(ev_data);
      nuta::EvalResult res = nuta::evaluate(net, ds, ev_batch);
      std::cout << "accuracy " << nuta::format_double(res.accuracy) << "\n";
      std::cout << "mean_loss " << nuta::format_double(res.mean_loss) << "\n";
      for (size_t k = 0; k < res.per_class_accuracy.size(); ++k)
        std::cout << "class_" << k << "_accuracy "
                  << nuta::format_double(res.per_class_accuracy[k]) << "\n";
      return 0;
    }

    if (fl->parsed()) {
      nuta::NetworkConfig cfg = nuta::NetworkConfig::from_file(fl_config);
      int64_t frames = fl_frames > 0 ? fl_frames : cfg.input_frames;
      int64_t size = fl_size > 0 ? fl_size : cfg.input_size;
      nuta::CostReport report = nuta::count_flops(cfg, fl_batch, frames, size);
      std::string title = fl_title.empty() ? fl_config : fl_title;
      std::cout << nuta::format_report(report, title);
      if (!fl_csv.empty()) {
        std::ofstream f(fl_csv, std::ios::binary);
        nuta::require<nuta::IoError>(f.good(), "flops: cannot open ", fl_csv);
        f << nuta::report_csv(report);
        std::cout << "csv " << fl_csv << "\n";
      }
      return 0;
    }

    if (vz->parsed()) {
      nuta::NetworkConfig cfg = nuta::NetworkConfig::from_file(vz_config);
      nuta::require<nuta::ConfigError>(!cfg.nuta_stages.empty(),
                                       "viz: the configured network has no "
                                       "aggregation modules, nothing to plot");
      uint64_t seed = vz->count("--seed") ? vz_seed : default_seed();
      nuta::TwoBranchNet net(cfg, seed);
      if (!vz_ckpt.empty()) net.load(vz_ckpt);
      nuta::Dataset ds = nuta::load_dataset(vz_data);
      nuta::require<nuta::ValueError>(vz_index >= 0 && vz_index < ds.meta.num_clips,
                                      "viz: clip index ", vz_index, " outside [0, ",
                                      ds.meta.num_clips, ")");
      nuta::Batch batch = nuta::make_batch(ds, {vz_index});
      nuta::NoGradGuard eval_only;
      nuta::Rng unused(0);
      nuta::ForwardResult fwd = net.forward(batch.clips, false, unused);
      nuta::Tape::active().clear();
      nuta::require<nuta::ValueError>(
          vz_module >= 0 && vz_module < static_cast<int64_t>(fwd.maps.size()),
          "viz: module index ", vz_module, " outside [0, ", fwd.maps.size(), ")");
      const nuta::ProjectionMap& m = fwd.maps[static_cast<size_t>(vz_module)];
      nuta::HeatmapExport hm = nuta::export_heatmap(m, 0, vz_out);
      std::cout << "clip " << vz_index << " label " << ds.samples[vz_index].label
                << " informative frames";
      for (int64_t t : ds.informative_frames(vz_index)) std::cout << " " << t;
      std::cout << "\n";
      std::cout << "map " << m.target_steps() << "x" << m.source_steps() << " per head, "
                << m.heads() << " heads, min " << nuta::format_double(hm.min_value)
                << " max " << nuta::format_double(hm.max_value) << "\n";
      if (vz_module == 0) {
        double mass = nuta::attention_mass(m, {ds.informative_frames(vz_index)});
        std::cout << "informative attention mass " << nuta::format_double(mass)
                  << " (uniform baseline "
                  << nuta::format_double(static_cast<double>(ds.meta.informative) /
                                         static_cast<double>(ds.meta.frames))
                  << ")\n";
      }
      for (const auto& p : hm.text_paths) std::cout << "wrote " << p << "\n";
      for (const auto& p : hm.image_paths) std::cout << "wrote " << p << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
