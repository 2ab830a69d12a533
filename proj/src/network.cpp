#include "nuta/network.hpp"

#include <cmath>

#include "nuta/error.hpp"
#include "nuta/serialize.hpp"

namespace nuta {

namespace {
std::array<int64_t, 3> same_pad(std::array<int64_t, 3> kernel) {
  return {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
}
}  // namespace

TwoBranchNet::TwoBranchNet(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  if (!cfg_.nuta_stages.empty())
    for (const StageConfig& s : cfg_.stages)
      require<ConfigError>(s.temporal_stride == 1,
                           "network: stage temporal strides are only for uniform-only "
                           "cost fixtures; module stages halve the timeline themselves");
  Rng rng(mix_seed(seed, 0x9A9AULL));
  nuta_set_.insert(cfg_.nuta_stages.begin(), cfg_.nuta_stages.end());

  // Stem.
  stem_.conv = Conv3dParams::make(
      cfg_.input_channels, cfg_.stem_channels,
      {cfg_.stem_temporal_kernel, cfg_.stem_spatial_kernel, cfg_.stem_spatial_kernel},
      {cfg_.stem_temporal_stride, cfg_.stem_spatial_stride, cfg_.stem_spatial_stride},
      same_pad({cfg_.stem_temporal_kernel, cfg_.stem_spatial_kernel,
                cfg_.stem_spatial_kernel}),
      1, /*with_bias=*/false, TemporalPad::replicate, rng);
  stem_.bn = BatchNormParams::make(cfg_.stem_channels);
  register_conv("stem.conv", stem_.conv);
  register_bn("stem.bn", stem_.bn);

  // Residual stages.
  int64_t in_ch = cfg_.stem_channels;
  std::map<int64_t, int64_t> width_entering;  // channels flowing into each stage
  for (const StageConfig& sc : cfg_.stages) {
    width_entering[sc.index] = in_ch;
    std::vector<ResidualBlock> blocks;
    for (int64_t b = 0; b < sc.blocks; ++b) {
      bool first = b == 0;
      int64_t bin = first ? in_ch : sc.channels;
      int64_t ss = first ? sc.spatial_stride : 1;
      int64_t ts = first ? sc.temporal_stride : 1;
      ResidualBlock blk;
      blk.kind = sc.block;
      std::string base = cat("stage", sc.index, ".block", b, ".");
      if (sc.block == BlockKind::basic) {
        int64_t kt = sc.temporal_kernel;
        blk.conv1.conv =
            Conv3dParams::make(bin, sc.channels, {kt, 3, 3}, {ts, ss, ss},
                               same_pad({kt, 3, 3}), 1, false, TemporalPad::replicate, rng);
        blk.conv1.bn = BatchNormParams::make(sc.channels);
        blk.conv2.conv =
            Conv3dParams::make(sc.channels, sc.channels, {1, 3, 3}, {1, 1, 1},
                               same_pad({1, 3, 3}), 1, false, TemporalPad::replicate, rng);
        blk.conv2.bn = BatchNormParams::make(sc.channels);
      } else {
        bool inflated = sc.inflate == InflatePattern::all ||
                        (sc.inflate == InflatePattern::alternating && b % 2 == 0);
        int64_t kt = inflated ? 3 : 1;
        blk.conv1.conv =
            Conv3dParams::make(bin, sc.mid_channels, {kt, 1, 1}, {ts, 1, 1},
                               same_pad({kt, 1, 1}), 1, false, TemporalPad::replicate, rng);
        blk.conv1.bn = BatchNormParams::make(sc.mid_channels);
        blk.conv2.conv = Conv3dParams::make(sc.mid_channels, sc.mid_channels, {1, 3, 3},
                                            {1, ss, ss}, same_pad({1, 3, 3}), 1, false,
                                            TemporalPad::replicate, rng);
        blk.conv2.bn = BatchNormParams::make(sc.mid_channels);
        blk.conv3.conv =
            Conv3dParams::make(sc.mid_channels, sc.channels, {1, 1, 1}, {1, 1, 1},
                               {0, 0, 0}, 1, false, TemporalPad::zero, rng);
        blk.conv3.bn = BatchNormParams::make(sc.channels);
      }
      if (bin != sc.channels || ss != 1 || ts != 1) {
        blk.has_shortcut = true;
        blk.shortcut.conv =
            Conv3dParams::make(bin, sc.channels, {1, 1, 1}, {ts, ss, ss}, {0, 0, 0}, 1,
                               false, TemporalPad::zero, rng);
        blk.shortcut.bn = BatchNormParams::make(sc.channels);
      }
      register_conv(base + "conv1", blk.conv1.conv);
      register_bn(base + "bn1", blk.conv1.bn);
      register_conv(base + "conv2", blk.conv2.conv);
      register_bn(base + "bn2", blk.conv2.bn);
      if (sc.block == BlockKind::bottleneck) {
        register_conv(base + "conv3", blk.conv3.conv);
        register_bn(base + "bn3", blk.conv3.bn);
      }
      if (blk.has_shortcut) {
        register_conv(base + "shortcut.conv", blk.shortcut.conv);
        register_bn(base + "shortcut.bn", blk.shortcut.bn);
      }
      blocks.push_back(std::move(blk));
    }
    stages_.push_back(std::move(blocks));
    in_ch = sc.channels;
  }

  // Module stages: fusion + aggregation parameters. The aggregated branch
  // entering stage s carries the previous module's width, or (at the first
  // placement) the width entering that stage's blocks.
  int64_t prev_nuta_ch = -1;
  for (const StageConfig& sc : cfg_.stages) {
    if (!nuta_set_.count(sc.index)) continue;
    NutaStage ns;
    ns.stage_index = sc.index;
    int64_t f_ch = prev_nuta_ch < 0 ? width_entering[sc.index] : prev_nuta_ch;
    int64_t u_ch = sc.channels;
    std::string base = cat("fuse", sc.index, ".");
    ns.fuse.kind = cfg_.fusion;
    switch (cfg_.fusion) {
      case FusionKind::concat:
        ns.fuse.proj = Conv3dParams::make(f_ch + u_ch, u_ch, {1, 1, 1}, {1, 1, 1},
                                          {0, 0, 0}, 1, true, TemporalPad::zero, rng);
        register_conv(base + "proj", ns.fuse.proj);
        break;
      case FusionKind::sum:
        ns.fuse.proj = Conv3dParams::make(f_ch, u_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                          true, TemporalPad::zero, rng);
        register_conv(base + "proj", ns.fuse.proj);
        break;
      case FusionKind::nonlocal:
        ns.fuse.proj = Conv3dParams::make(f_ch, u_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                          true, TemporalPad::zero, rng);
        ns.fuse.query = Conv3dParams::make(u_ch, u_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                           false, TemporalPad::zero, rng);
        ns.fuse.key = Conv3dParams::make(u_ch, u_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                         false, TemporalPad::zero, rng);
        ns.fuse.value = Conv3dParams::make(u_ch, u_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                           false, TemporalPad::zero, rng);
        ns.fuse.out = Conv3dParams::make(u_ch, u_ch, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1,
                                         true, TemporalPad::zero, rng);
        // Identity start: the attention path contributes nothing until learned.
        ns.fuse.out.weight.overwrite_data(
            std::vector<double>(static_cast<size_t>(ns.fuse.out.weight.numel()), 0.0));
        register_conv(base + "proj", ns.fuse.proj);
        register_conv(base + "query", ns.fuse.query);
        register_conv(base + "key", ns.fuse.key);
        register_conv(base + "value", ns.fuse.value);
        register_conv(base + "out", ns.fuse.out);
        break;
    }
    ns.module = NutaModuleParams::make(u_ch, cfg_.nuta_heads, cfg_.nuta_groups, rng);
    std::string mbase = cat("nuta", sc.index, ".");
    register_conv(mbase + "phi", ns.module.phi);
    register_conv(mbase + "theta", ns.module.theta);
    register_conv(mbase + "delta", ns.module.delta);
    register_conv(mbase + "zeta", ns.module.zeta);
    register_conv(mbase + "compress", ns.module.compress);
    prev_nuta_ch = u_ch;
    nuta_.emplace(sc.index, std::move(ns));
  }

  // Classifier head.
  int64_t feat = cfg_.stages.back().channels;
  if (cfg_.head_input == HeadInput::both && !cfg_.nuta_stages.empty()) feat *= 2;
  head_weight_ = Tensor::randn(Shape{cfg_.classes, feat}, rng, std::sqrt(2.0 / feat), true);
  head_bias_ = Tensor::zeros(Shape{cfg_.classes}, true);
  params_.emplace_back("head.linear.weight", head_weight_);
  params_.emplace_back("head.linear.bias", head_bias_);
}

void TwoBranchNet::register_conv(const std::string& name, Conv3dParams& p) {
  params_.emplace_back(name + ".weight", p.weight);
  if (p.bias.defined()) params_.emplace_back(name + ".bias", p.bias);
}

void TwoBranchNet::register_bn(const std::string& name, BatchNormParams& p) {
  params_.emplace_back(name + ".scale", p.scale);
  params_.emplace_back(name + ".shift", p.shift);
  buffers_.emplace_back(name + ".running_mean", p.running_mean);
  buffers_.emplace_back(name + ".running_var", p.running_var);
}

bool TwoBranchNet::is_nuta_stage(int64_t stage_index) const {
  return nuta_set_.count(stage_index) > 0;
}

const NutaModuleParams& TwoBranchNet::module_at(int64_t stage_index) const {
  auto it = nuta_.find(stage_index);
  require<ValueError>(it != nuta_.end(), "network: stage ", stage_index,
                      " has no aggregation module");
  return it->second.module;
}

Tensor TwoBranchNet::stem_forward(const Tensor& clip, bool train_mode) {
  Tensor x = relu(batchnorm3d(conv3d(clip, stem_.conv), stem_.bn, train_mode));
  if (cfg_.stem_pool) x = spatial_avgpool2(x);
  return x;
}

Tensor TwoBranchNet::block_forward(ResidualBlock& b, const Tensor& x, bool train_mode) {
  Tensor y = relu(batchnorm3d(conv3d(x, b.conv1.conv), b.conv1.bn, train_mode));
  if (b.kind == BlockKind::basic) {
    y = batchnorm3d(conv3d(y, b.conv2.conv), b.conv2.bn, train_mode);
  } else {
    y = relu(batchnorm3d(conv3d(y, b.conv2.conv), b.conv2.bn, train_mode));
    y = batchnorm3d(conv3d(y, b.conv3.conv), b.conv3.bn, train_mode);
  }
  Tensor s = b.has_shortcut
                 ? batchnorm3d(conv3d(x, b.shortcut.conv), b.shortcut.bn, train_mode)
                 : x;
  return relu(add(y, s));
}

Tensor TwoBranchNet::residual_stage(int64_t stage_index, const Tensor& x, bool train_mode) {
  int64_t first = cfg_.stages.front().index;
  require<ValueError>(stage_index >= first &&
                          stage_index < first + static_cast<int64_t>(stages_.size()),
                      "network: no stage ", stage_index);
  Tensor y = x;
  for (ResidualBlock& b : stages_[static_cast<size_t>(stage_index - first)])
    y = block_forward(b, y, train_mode);
  return y;
}

Tensor TwoBranchNet::init_nuta_feature(const Tensor& uniform_feature, int64_t out_h,
                                       int64_t out_w) {
  return spatial_pool_to(uniform_feature, out_h, out_w);
}

Tensor TwoBranchNet::fuse(int64_t stage_index, const Tensor& u, const Tensor& f_nuta) {
  auto it = nuta_.find(stage_index);
  require<ValueError>(it != nuta_.end(), "network: stage ", stage_index,
                      " has no fusion parameters");
  FusionParams& fp = it->second.fuse;
  require(u.shape()[2] == f_nuta.shape()[2], "fuse: timeline mismatch, uniform ",
          u.shape().str(), " vs aggregated ", f_nuta.shape().str());
  Tensor f = spatial_pool_to(f_nuta, u.shape()[3], u.shape()[4]);
  switch (fp.kind) {
    case FusionKind::concat:
      return conv3d(concat_channels(u, f), fp.proj);
    case FusionKind::sum:
      return add(u, conv3d(f, fp.proj));
    case FusionKind::nonlocal: {
      Tensor fp_proj = conv3d(f, fp.proj);
      HeadLayout heads{cfg_.nuta_heads};
      Tensor q = gamma(conv3d(u, fp.query), heads);        // [N, n, T, d]
      Tensor k = gamma(conv3d(fp_proj, fp.key), heads);    // [N, n, T, d]
      Tensor v = gamma(conv3d(fp_proj, fp.value), heads);  // [N, n, T, d]
      Tensor attn = softmax_lastdim(matmul(q, transpose_last2(k)));
      Tensor mixed = gamma_inverse(matmul(attn, v), u.shape()[1], u.shape()[3],
                                   u.shape()[4]);
      return add(u, conv3d(mixed, fp.out));
    }
  }
  throw ValueError("fuse: unreachable fusion kind");
}

Tensor TwoBranchNet::classify_from(const Tensor& uniform_feature, const Tensor& nuta_feature,
                                   bool train_mode, Rng& rng) {
  Tensor h = global_avgpool(uniform_feature);
  if (cfg_.head_input == HeadInput::both && nuta_feature.defined())
    h = concat_channels(h, global_avgpool(nuta_feature));
  h = dropout(h, cfg_.dropout, train_mode, rng);
  return linear(h, head_weight_, head_bias_);
}

ForwardResult TwoBranchNet::forward(const Tensor& clip, bool train_mode, Rng& rng) {
  require(clip.defined() && clip.shape().rank() == 5,
          "network: clip must be [N,C,T,H,W]");
  require(clip.shape()[1] == cfg_.input_channels, "network: clip channels ",
          clip.shape()[1], " != configured ", cfg_.input_channels);

  ForwardResult out;
  Tensor x = stem_forward(clip, train_mode);
  Tensor f_nuta;
  for (const StageConfig& sc : cfg_.stages) {
    Tensor stage_input = x;
    Tensor u = residual_stage(sc.index, x, train_mode);
    if (is_nuta_stage(sc.index)) {
      Tensor f_in = f_nuta.defined()
                        ? f_nuta
                        : init_nuta_feature(stage_input, u.shape()[3], u.shape()[4]);
      Tensor fused = fuse(sc.index, u, f_in);
      auto [agg, m] = nuta_forward(fused, nuta_.at(sc.index).module);
      out.maps.push_back(m);
      f_nuta = agg;
      x = temporal_sync(u, m, nuta_.at(sc.index).module);
    } else {
      x = u;
    }
  }
  out.uniform_feature = x;
  out.nuta_feature = f_nuta;
  out.logits = classify_from(x, f_nuta, train_mode, rng);
  return out;
}

int64_t TwoBranchNet::parameter_count() const {
  int64_t total = 0;
  for (const auto& [name, t] : params_) total += t.numel();
  return total;
}

void TwoBranchNet::save(const std::string& path) const {
  std::vector<std::pair<std::string, Tensor>> all(params_);
  all.insert(all.end(), buffers_.begin(), buffers_.end());
  save_tensors(path, all);
}

void TwoBranchNet::load(const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> all(params_);
  all.insert(all.end(), buffers_.begin(), buffers_.end());
  load_into(path, all);
}

}  // namespace nuta
