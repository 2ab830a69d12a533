#include "nuta/tensor.hpp"

#include <cmath>

#include "nuta/error.hpp"

namespace nuta {

namespace {
bool g_finite_checks = false;

std::shared_ptr<TensorImpl> make_impl(const Shape& shape, std::vector<double> data,
                                      bool requires_grad) {
  require(static_cast<int64_t>(data.size()) == shape.numel(),
          "tensor: data size ", data.size(), " does not match shape ",
                      shape.str());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}
}  // namespace

bool finite_checks() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    require<ValueError>(std::isfinite(v), what, ": non-finite value ", v);
}

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return wrap_impl(make_impl(shape, std::vector<double>(static_cast<size_t>(shape.numel()), 0.0),
                             requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return wrap_impl(make_impl(shape, std::vector<double>(static_cast<size_t>(shape.numel()), value),
                             requires_grad));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> data, bool requires_grad) {
  return wrap_impl(make_impl(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector(Shape{}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape.numel()));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return from_vector(shape, std::move(data), requires_grad);
}

Tensor Tensor::rand_uniform(const Shape& shape, Rng& rng, double lo, double hi,
                            bool requires_grad) {
  std::vector<double> data(static_cast<size_t>(shape.numel()));
  for (double& v : data) v = rng.uniform(lo, hi);
  return from_vector(shape, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  require<ValueError>(defined(), "tensor: use of undefined handle");
  return impl_->shape;
}

std::span<const double> Tensor::data() const {
  require<ValueError>(defined(), "tensor: use of undefined handle");
  return impl_->data;
}

double Tensor::item() const {
  require<ValueError>(numel() == 1, "tensor: item() needs a single element, shape is ",
                      shape().str());
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  const Shape& s = shape();
  require(static_cast<int64_t>(index.size()) == s.rank(), "tensor: at() got ", index.size(),
          " indices for shape ", s.str());
  auto strides = s.strides();
  int64_t off = 0;
  int64_t axis = 0;
  for (int64_t i : index) {
    require(i >= 0 && i < s[axis], "tensor: index ", i, " out of range on axis ", axis,
            " for shape ", s.str());
    off += i * strides[static_cast<size_t>(axis)];
    ++axis;
  }
  return impl_->data[static_cast<size_t>(off)];
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require<ValueError>(defined(), "tensor: use of undefined handle");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require<ValueError>(has_grad(), "tensor: no gradient accumulated");
  return impl_->grad;
}

void Tensor::zero_grad() {
  require<ValueError>(defined(), "tensor: use of undefined handle");
  impl_->grad.clear();
}

void Tensor::overwrite_data(std::span<const double> values) {
  require<ValueError>(defined(), "tensor: use of undefined handle");
  require<ValueError>(static_cast<int64_t>(values.size()) == numel(),
                      "tensor: overwrite size ", values.size(), " != numel ", numel());
  std::copy(values.begin(), values.end(), impl_->data.begin());
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  require<ValueError>(defined(), "tensor: use of undefined handle");
  return from_vector(impl_->shape, impl_->data, requires_grad);
}

Tape& Tape::active() {
  static Tape tape;
  return tape;
}

void Tape::record(Entry entry) {
  if (recording_) entries_.push_back(std::move(entry));
}

void Tape::clear() { entries_.clear(); }

std::vector<double>& BackwardPass::buf(const TensorImpl* impl) {
  auto it = grads_.find(impl);
  if (it == grads_.end()) {
    it = grads_.emplace(impl, std::vector<double>(impl->data.size(), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* BackwardPass::find(const TensorImpl* impl) const {
  auto it = grads_.find(impl);
  return it == grads_.end() ? nullptr : &it->second;
}

void Tape::backward(const Tensor& loss) {
  require<ValueError>(loss.defined() && loss.numel() == 1,
                      "backward: loss must be a defined single-element tensor");
  require<ValueError>(loss.requires_grad(),
                      "backward: loss is detached from the recorded graph");

  BackwardPass pass;
  pass.buf(loss.raw())[0] = 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!pass.find(it->output.get())) continue;  // branch not on the loss path
    it->backward(pass);
  }

  for (auto& [impl, g] : pass.all()) {
    auto* mut = const_cast<TensorImpl*>(impl);
    if (!mut->requires_grad) continue;
    if (mut->grad.empty()) mut->grad.assign(mut->data.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) mut->grad[i] += g[i];
    if (finite_checks()) check_finite(mut->grad, "backward gradient");
  }
}

}  // namespace nuta
