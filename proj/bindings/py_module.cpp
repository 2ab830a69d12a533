// Python bindings: numpy-facing wrappers around the tensor ops, the
// aggregation module, the two-branch network and the analytic cost walk.
// Everything runs forward-only (no tape recording); training stays in C++.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <vector>

#include "nuta/config.hpp"
#include "nuta/error.hpp"
#include "nuta/flops.hpp"
#include "nuta/network.hpp"
#include "nuta/nn_ops.hpp"
#include "nuta/nuta_module.hpp"
#include "nuta/ops.hpp"
#include "nuta/tensor.hpp"

namespace py = pybind11;
using dense_array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

nuta::Tensor to_tensor(const dense_array& a) {
  std::vector<int64_t> dims(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) {
    nuta::require<nuta::ValueError>(a.shape(i) >= 1,
                                    "arrays must have every extent >= 1");
    dims[static_cast<size_t>(i)] = static_cast<int64_t>(a.shape(i));
  }
  std::vector<double> data(a.data(), a.data() + a.size());
  return nuta::Tensor::from_vector(nuta::Shape(std::move(dims)), std::move(data));
}

py::array to_array(const nuta::Tensor& t) {
  std::vector<py::ssize_t> dims;
  for (int64_t d : t.shape().dims()) dims.push_back(static_cast<py::ssize_t>(d));
  py::array_t<double> out(dims);
  std::memcpy(out.mutable_data(), t.data().data(),
              static_cast<size_t>(t.numel()) * sizeof(double));
  return out;
}

nuta::ProjectionMap to_map(const dense_array& m) {
  nuta::Tensor t = to_tensor(m);
  nuta::require<nuta::ShapeError>(t.shape().rank() == 4,
                                  "projection map must be [batch, heads, targets, sources]");
  return nuta::ProjectionMap{t};
}

// Forward-only wrapper of one aggregation module with freshly seeded weights.
class Module {
 public:
  Module(int64_t channels, int64_t heads, int64_t conv_groups, uint64_t seed)
      : channels_(channels) {
    nuta::Rng rng(seed);
    params_ = nuta::NutaModuleParams::make(channels, heads, conv_groups, rng);
  }

  py::array projection_map(const dense_array& f) const {
    nuta::NoGradGuard guard;
    return to_array(nuta::projection_map(to_tensor(f), params_).values);
  }

  py::tuple forward(const dense_array& f) const {
    nuta::NoGradGuard guard;
    auto [agg, m] = nuta::nuta_forward(to_tensor(f), params_);
    return py::make_tuple(to_array(agg), to_array(m.values));
  }

  py::array aggregate(const dense_array& f, const dense_array& m) const {
    nuta::NoGradGuard guard;
    return to_array(nuta::nuta_aggregate(to_tensor(f), to_map(m), params_));
  }

  py::array sync(const dense_array& f_res, const dense_array& m) const {
    nuta::NoGradGuard guard;
    return to_array(nuta::temporal_sync(to_tensor(f_res), to_map(m), params_));
  }

  int64_t channels() const { return channels_; }
  int64_t heads() const { return params_.layout.heads; }

 private:
  int64_t channels_;
  nuta::NutaModuleParams params_;
};

// Forward-only wrapper of the two-branch classifier.
class Network {
 public:
  Network(const std::string& config_path, uint64_t seed)
      : cfg_(nuta::NetworkConfig::from_file(config_path)), net_(cfg_, seed) {}

  py::dict forward(const dense_array& clip) {
    nuta::NoGradGuard guard;
    nuta::Rng unused(0);
    nuta::ForwardResult r = net_.forward(to_tensor(clip), false, unused);
    py::list maps;
    for (const nuta::ProjectionMap& m : r.maps) maps.append(to_array(m.values));
    py::dict out;
    out["logits"] = to_array(r.logits);
    out["maps"] = maps;
    out["uniform_feature"] = to_array(r.uniform_feature);
    out["nuta_feature"] =
        r.nuta_feature.defined() ? py::object(to_array(r.nuta_feature)) : py::none();
    return out;
  }

  void load(const std::string& path) { net_.load(path); }
  void save(const std::string& path) const { net_.save(path); }
  int64_t parameter_count() const { return net_.parameter_count(); }
  int64_t classes() const { return cfg_.classes; }
  int64_t input_frames() const { return cfg_.input_frames; }
  int64_t input_size() const { return cfg_.input_size; }

 private:
  nuta::NetworkConfig cfg_;
  nuta::TwoBranchNet net_;
};

py::dict cost_report(const std::string& config_path, int64_t batch, int64_t frames,
                     int64_t size) {
  nuta::NetworkConfig cfg = nuta::NetworkConfig::from_file(config_path);
  if (frames <= 0) frames = cfg.input_frames;
  if (size <= 0) size = cfg.input_size;
  nuta::CostReport r = nuta::count_flops(cfg, batch, frames, size);
  py::list layers;
  for (const nuta::LayerCost& l : r.layers) {
    py::dict row;
    row["name"] = l.name;
    row["group"] = l.group;
    row["output"] = l.out.dims();
    row["macs"] = l.macs;
    layers.append(row);
  }
  py::dict out;
  out["layers"] = layers;
  out["total_macs"] = r.total_macs;
  out["stem_macs"] = r.stem_macs;
  out["backbone_macs"] = r.backbone_macs;
  out["nuta_macs"] = r.nuta_macs;
  out["head_macs"] = r.head_macs;
  out["gflops_fused"] = r.gflops_fused();
  out["gflops_mul_add"] = r.gflops_mul_add();
  out["uniform_feature"] = r.uniform_feature.dims();
  out["nuta_feature"] = r.nuta_feature.dims();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "non-uniform temporal aggregation: numpy-facing core operations";

  m.def(
      "gamma",
      [](const dense_array& x, int64_t heads) {
        nuta::NoGradGuard guard;
        return to_array(nuta::gamma(to_tensor(x), nuta::HeadLayout{heads}));
      },
      py::arg("x"), py::arg("heads"),
      "Head-split flattening: [N, C, T, H, W] -> [N, heads, T, (C/heads)*H*W]");

  m.def(
      "gamma_inverse",
      [](const dense_array& g, int64_t channels, int64_t height, int64_t width) {
        nuta::NoGradGuard guard;
        return to_array(nuta::gamma_inverse(to_tensor(g), channels, height, width));
      },
      py::arg("g"), py::arg("channels"), py::arg("height"), py::arg("width"),
      "Inverse of gamma: [N, heads, T, d] -> [N, C, T, H, W]");

  m.def(
      "softmax",
      [](const dense_array& x) {
        nuta::NoGradGuard guard;
        return to_array(nuta::softmax_lastdim(to_tensor(x)));
      },
      py::arg("x"), "Softmax over the last axis");

  m.def(
      "matmul",
      [](const dense_array& a, const dense_array& b) {
        nuta::NoGradGuard guard;
        return to_array(nuta::matmul(to_tensor(a), to_tensor(b)));
      },
      py::arg("a"), py::arg("b"), "Batched matrix product over the last two axes");

  m.def(
      "conv3d",
      [](const dense_array& x, const dense_array& weight,
         std::optional<dense_array> bias, std::vector<int64_t> stride,
         std::vector<int64_t> padding, int64_t groups, bool replicate_time) {
        nuta::require<nuta::ValueError>(stride.size() == 3 && padding.size() == 3,
                                        "stride and padding must have 3 entries");
        nuta::NoGradGuard guard;
        nuta::Conv3dParams p;
        p.weight = to_tensor(weight);
        if (bias) p.bias = to_tensor(*bias);
        p.stride = {stride[0], stride[1], stride[2]};
        p.padding = {padding[0], padding[1], padding[2]};
        p.groups = groups;
        p.temporal_pad =
            replicate_time ? nuta::TemporalPad::replicate : nuta::TemporalPad::zero;
        return to_array(nuta::conv3d(to_tensor(x), p));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(),
      py::arg("stride") = std::vector<int64_t>{1, 1, 1},
      py::arg("padding") = std::vector<int64_t>{0, 0, 0}, py::arg("groups") = 1,
      py::arg("replicate_time") = false,
      "Grouped 3D cross-correlation over [N, C, T, H, W]");

  m.def(
      "temporal_maxpool2",
      [](const dense_array& x) {
        nuta::NoGradGuard guard;
        return to_array(nuta::temporal_maxpool2(to_tensor(x)));
      },
      py::arg("x"), "Temporal max pooling with kernel 2, stride 2");

  py::class_<Module>(m, "Module",
                     "One aggregation module with freshly seeded weights "
                     "(forward-only)")
      .def(py::init<int64_t, int64_t, int64_t, uint64_t>(), py::arg("channels"),
           py::arg("heads"), py::arg("conv_groups"), py::arg("seed"))
      .def("projection_map", &Module::projection_map, py::arg("f"),
           "Row-stochastic map [N, heads, T/2, T] built from the feature")
      .def("forward", &Module::forward, py::arg("f"),
           "Returns (aggregated feature [N, C, T/2, H, W], map values)")
      .def("aggregate", &Module::aggregate, py::arg("f"), py::arg("m"),
           "Applies a given map to the feature's value transform")
      .def("sync", &Module::sync, py::arg("f_res"), py::arg("m"),
           "Synchronises the residual branch onto the halved timeline")
      .def_property_readonly("channels", &Module::channels)
      .def_property_readonly("heads", &Module::heads);

  py::class_<Network>(m, "Network",
                      "Two-branch video classifier built from a config file "
                      "(forward-only)")
      .def(py::init<const std::string&, uint64_t>(), py::arg("config_path"),
           py::arg("seed"))
      .def("forward", &Network::forward, py::arg("clip"),
           "Eval-mode forward pass; returns logits, maps and both features")
      .def("load", &Network::load, py::arg("path"))
      .def("save", &Network::save, py::arg("path"))
      .def("parameter_count", &Network::parameter_count)
      .def_property_readonly("classes", &Network::classes)
      .def_property_readonly("input_frames", &Network::input_frames)
      .def_property_readonly("input_size", &Network::input_size);

  m.def("count_flops", &cost_report, py::arg("config_path"), py::arg("batch") = 1,
        py::arg("frames") = 0, py::arg("size") = 0,
        "Analytic per-layer MAC table for a config (0 = config geometry)");
}
