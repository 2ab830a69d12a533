#include "nuta/flops.hpp"

#include <iomanip>
#include <set>
#include <sstream>

#include "nuta/error.hpp"

namespace nuta {

namespace {

struct Dims {
  int64_t N, C, T, H, W;
  Shape shape() const { return Shape{N, C, T, H, W}; }
};

int64_t out_extent(int64_t x, int64_t k, int64_t s, int64_t p) {
  require(x + 2 * p >= k, "cost walk: kernel ", k, " larger than padded extent ",
          x + 2 * p);
  return (x + 2 * p - k) / s + 1;
}

class Walker {
 public:
  explicit Walker(CostReport& r) : r_(r) {}

  void add(const std::string& name, const std::string& group, const Shape& out,
           uint64_t macs) {
    r_.layers.push_back({name, group, out, macs});
    r_.total_macs += macs;
    if (group == "stem") r_.stem_macs += macs;
    else if (group == "backbone") r_.backbone_macs += macs;
    else if (group == "nuta") r_.nuta_macs += macs;
    else r_.head_macs += macs;
  }

  Dims conv(const std::string& name, const std::string& group, Dims in, int64_t cout,
            std::array<int64_t, 3> k, std::array<int64_t, 3> s, std::array<int64_t, 3> p,
            int64_t groups) {
    require(in.C % groups == 0 && cout % groups == 0, "cost walk: ", name,
            ": channels not divisible by groups");
    Dims out = in;
    out.C = cout;
    out.T = out_extent(in.T, k[0], s[0], p[0]);
    out.H = out_extent(in.H, k[1], s[1], p[1]);
    out.W = out_extent(in.W, k[2], s[2], p[2]);
    uint64_t out_elems = static_cast<uint64_t>(out.N * out.C * out.T * out.H * out.W);
    uint64_t per = static_cast<uint64_t>((in.C / groups) * k[0] * k[1] * k[2]);
    add(name, group, out.shape(), out_elems * per);
    return out;
  }

  Dims bn_eval(const std::string& name, const std::string& group, Dims in) {
    add(name, group, in.shape(),
        static_cast<uint64_t>(in.N * in.C * in.T * in.H * in.W));
    return in;
  }

  Dims pool_to(const std::string& name, const std::string& group, Dims in, int64_t oh,
               int64_t ow) {
    require(in.H % oh == 0 && in.W % ow == 0, "cost walk: ", name, ": pooling ", in.H, "x",
            in.W, " to ", oh, "x", ow, " does not divide");
    Dims out = in;
    out.H = oh;
    out.W = ow;
    add(name, group, out.shape(), static_cast<uint64_t>(out.N * out.C * out.T * oh * ow));
    return out;
  }

  Dims tmaxpool(const std::string& name, const std::string& group, Dims in) {
    require(in.T % 2 == 0, "cost walk: ", name, ": timeline ", in.T, " must be even");
    Dims out = in;
    out.T = in.T / 2;
    add(name, group, out.shape(), 0);
    return out;
  }

  void matmul(const std::string& name, const std::string& group, int64_t batch, int64_t p,
              int64_t k, int64_t q) {
    add(name, group, Shape{batch, p, q},
        static_cast<uint64_t>(batch) * static_cast<uint64_t>(p) *
            static_cast<uint64_t>(k) * static_cast<uint64_t>(q));
  }

  void softmax(const std::string& name, const std::string& group, int64_t batch, int64_t p,
               int64_t q) {
    add(name, group, Shape{batch, p, q}, 2ull * static_cast<uint64_t>(batch * p * q));
  }

 private:
  CostReport& r_;
};

}  // namespace

CostReport count_flops(const NetworkConfig& cfg, int64_t batch, int64_t frames,
                       int64_t size) {
  cfg.validate();
  require<ValueError>(batch >= 1 && frames >= 1 && size >= 1,
                      "cost walk: batch, frames and size must be >= 1");
  CostReport report;
  Walker w(report);

  Dims x{batch, cfg.input_channels, frames, size, size};
  // Stem.
  {
    std::array<int64_t, 3> k{cfg.stem_temporal_kernel, cfg.stem_spatial_kernel,
                             cfg.stem_spatial_kernel};
    std::array<int64_t, 3> s{cfg.stem_temporal_stride, cfg.stem_spatial_stride,
                             cfg.stem_spatial_stride};
    std::array<int64_t, 3> p{k[0] / 2, k[1] / 2, k[2] / 2};
    x = w.conv("stem.conv", "stem", x, cfg.stem_channels, k, s, p, 1);
    x = w.bn_eval("stem.bn", "stem", x);
    if (cfg.stem_pool) {
      require(x.H % 2 == 0 && x.W % 2 == 0, "cost walk: stem pool needs even extents");
      x = w.pool_to("stem.pool", "stem", x, x.H / 2, x.W / 2);
    }
  }

  std::set<int64_t> nuta_set(cfg.nuta_stages.begin(), cfg.nuta_stages.end());
  bool have_nuta_feature = false;
  Dims f{0, 0, 0, 0, 0};  // aggregated branch
  int64_t head_channels = 0;

  for (const StageConfig& sc : cfg.stages) {
    StageTrace trace;
    trace.index = sc.index;
    trace.in = x.shape();
    trace.nuta = nuta_set.count(sc.index) > 0;
    Dims stage_input = x;

    // Residual blocks.
    int64_t in_ch = x.C;
    for (int64_t b = 0; b < sc.blocks; ++b) {
      bool first = b == 0;
      int64_t bin = first ? in_ch : sc.channels;
      int64_t ss = first ? sc.spatial_stride : 1;
      int64_t ts = first ? sc.temporal_stride : 1;
      std::string base = cat("stage", sc.index, ".block", b, ".");
      Dims y = x;
      if (sc.block == BlockKind::basic) {
        int64_t kt = sc.temporal_kernel;
        y = w.conv(base + "conv1", "backbone", y, sc.channels, {kt, 3, 3}, {ts, ss, ss},
                   {kt / 2, 1, 1}, 1);
        y = w.bn_eval(base + "bn1", "backbone", y);
        y = w.conv(base + "conv2", "backbone", y, sc.channels, {1, 3, 3}, {1, 1, 1},
                   {0, 1, 1}, 1);
        y = w.bn_eval(base + "bn2", "backbone", y);
      } else {
        bool inflated = sc.inflate == InflatePattern::all ||
                        (sc.inflate == InflatePattern::alternating && b % 2 == 0);
        int64_t kt = inflated ? 3 : 1;
        y = w.conv(base + "conv1", "backbone", y, sc.mid_channels, {kt, 1, 1}, {ts, 1, 1},
                   {kt / 2, 0, 0}, 1);
        y = w.bn_eval(base + "bn1", "backbone", y);
        y = w.conv(base + "conv2", "backbone", y, sc.mid_channels, {1, 3, 3}, {1, ss, ss},
                   {0, 1, 1}, 1);
        y = w.bn_eval(base + "bn2", "backbone", y);
        y = w.conv(base + "conv3", "backbone", y, sc.channels, {1, 1, 1}, {1, 1, 1},
                   {0, 0, 0}, 1);
        y = w.bn_eval(base + "bn3", "backbone", y);
      }
      if (bin != sc.channels || ss != 1 || ts != 1) {
        Dims sh = w.conv(base + "shortcut.conv", "backbone", x, sc.channels, {1, 1, 1},
                         {ts, ss, ss}, {0, 0, 0}, 1);
        sh = w.bn_eval(base + "shortcut.bn", "backbone", sh);
        require(sh.shape() == y.shape(), "cost walk: shortcut misaligned at ", base);
      }
      x = y;
    }

    if (trace.nuta) {
      std::string fb = cat("fuse", sc.index, ".");
      Dims fin{0, 0, 0, 0, 0};
      if (!have_nuta_feature) {
        fin = w.pool_to(cat("nuta", sc.index, ".init_pool"), "nuta", stage_input, x.H, x.W);
      } else {
        fin = f;
      }
      require(fin.T == x.T, "cost walk: fuse timeline mismatch at stage ", sc.index, ": ",
              fin.T, " vs ", x.T);
      fin = w.pool_to(fb + "pool", "nuta", fin, x.H, x.W);

      int64_t n = cfg.nuta_heads;
      int64_t d_u = (x.C / n) * x.H * x.W;
      Dims fused = x;
      switch (cfg.fusion) {
        case FusionKind::concat: {
          Dims cat_in = x;
          cat_in.C = x.C + fin.C;
          fused = w.conv(fb + "proj", "nuta", cat_in, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                         1);
          break;
        }
        case FusionKind::sum: {
          w.conv(fb + "proj", "nuta", fin, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
          fused = x;
          break;
        }
        case FusionKind::nonlocal: {
          Dims fp = w.conv(fb + "proj", "nuta", fin, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                           1);
          w.conv(fb + "query", "nuta", x, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
          w.conv(fb + "key", "nuta", fp, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
          w.conv(fb + "value", "nuta", fp, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
          w.matmul(fb + "qk_matmul", "nuta", batch * n, x.T, d_u, x.T);
          w.softmax(fb + "softmax", "nuta", batch * n, x.T, x.T);
          w.matmul(fb + "mix_matmul", "nuta", batch * n, x.T, x.T, d_u);
          w.conv(fb + "out", "nuta", x, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1);
          fused = x;
          break;
        }
      }

      // Module: projection map, aggregation, synchronisation.
      std::string nb = cat("nuta", sc.index, ".");
      require(fused.T % 2 == 0, "cost walk: stage ", sc.index, " timeline ", fused.T,
              " must be even for the module");
      Dims pooled = w.tmaxpool(nb + "pool", "nuta", fused);
      Dims q = w.conv(nb + "phi", "nuta", pooled, fused.C, {3, 1, 1}, {1, 1, 1}, {1, 0, 0},
                      cfg.nuta_groups);
      w.conv(nb + "theta", "nuta", fused, fused.C, {3, 1, 1}, {1, 1, 1}, {1, 0, 0},
             cfg.nuta_groups);
      int64_t d = (fused.C / n) * fused.H * fused.W;
      w.matmul(nb + "qk_matmul", "nuta", batch * n, q.T, d, fused.T);
      w.softmax(nb + "softmax", "nuta", batch * n, q.T, fused.T);
      w.conv(nb + "delta", "nuta", fused, fused.C, {3, 1, 1}, {1, 1, 1}, {1, 0, 0},
             cfg.nuta_groups);
      w.matmul(nb + "mix_matmul", "nuta", batch * n, q.T, fused.T, d);
      Dims agg = fused;
      agg.T = q.T;
      agg = w.conv(nb + "compress", "nuta", agg, fused.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                   1);

      std::string sb = cat("sync", sc.index, ".");
      w.conv(sb + "zeta", "nuta", x, x.C, {3, 1, 1}, {1, 1, 1}, {1, 0, 0}, cfg.nuta_groups);
      w.matmul(sb + "mix_matmul", "nuta", batch * n, q.T, x.T, d_u);
      Dims syncd = x;
      syncd.T = q.T;
      syncd = w.conv(sb + "compress", "nuta", syncd, x.C, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                     1);
      w.tmaxpool(sb + "pool", "nuta", x);

      f = agg;
      have_nuta_feature = true;
      x = syncd;
    }
    trace.out = x.shape();
    report.stages.push_back(trace);
    head_channels = x.C;
  }

  // Head.
  w.add("head.pool_uniform", "head", Shape{batch, x.C},
        static_cast<uint64_t>(batch * x.C));
  int64_t feat = head_channels;
  if (cfg.head_input == HeadInput::both && have_nuta_feature) {
    w.add("head.pool_nuta", "head", Shape{batch, f.C}, static_cast<uint64_t>(batch * f.C));
    feat += f.C;
  }
  w.add("head.linear", "head", Shape{batch, cfg.classes},
        static_cast<uint64_t>(batch * feat * cfg.classes));

  report.uniform_feature = x.shape();
  report.nuta_feature = have_nuta_feature ? f.shape() : Shape{};
  return report;
}

std::string format_report(const CostReport& r, const std::string& title) {
  std::ostringstream os;
  os << title << "\n";
  os << std::left << std::setw(28) << "layer" << std::setw(10) << "group" << std::setw(22)
     << "output" << std::right << std::setw(14) << "MACs" << "\n";
  for (const LayerCost& l : r.layers) {
    os << std::left << std::setw(28) << l.name << std::setw(10) << l.group << std::setw(22)
       << l.out.str() << std::right << std::setw(14) << l.macs << "\n";
  }
  os << "\n";
  os << "stem      " << r.stem_macs << "\n";
  os << "backbone  " << r.backbone_macs << "\n";
  os << "nuta      " << r.nuta_macs << "\n";
  os << "head      " << r.head_macs << "\n";
  os << "total     " << r.total_macs << " MACs = " << std::fixed << std::setprecision(3)
     << r.gflops_fused() << " GFLOPs (fused multiply-add) = " << r.gflops_mul_add()
     << " GFLOPs (separate multiply and add)\n";
  return os.str();
}

std::string report_csv(const CostReport& r) {
  std::ostringstream os;
  os << "layer,group,output,macs\n";
  for (const LayerCost& l : r.layers)
    os << l.name << ',' << l.group << ',' << l.out.str() << ',' << l.macs << "\n";
  return os.str();
}

}  // namespace nuta
