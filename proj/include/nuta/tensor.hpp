#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nuta/rng.hpp"
#include "nuta/shape.hpp"

namespace nuta {

// Storage behind a Tensor handle. Data is immutable after creation except
// through two sanctioned doors: gradient accumulation during backward, and
// Tensor::overwrite_data, which exists for the training harness (optimizer
// steps, batch-norm running stats). Both run on the recording thread.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until the first backward touches it
};

class Tensor {
 public:
  Tensor() = default;  // undefined handle

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, std::vector<double> data,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi,
                             bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const { return shape().numel(); }
  std::span<const double> data() const;
  double item() const;  // single-element tensors only

  // Convenience element access for tests and tooling (row-major index list).
  double at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);  // leaves only; flip before recording ops
  bool has_grad() const;
  std::span<const double> grad() const;  // throws if no grad accumulated yet
  void zero_grad();

  // Harness-only mutation door; shape (element count) must be preserved.
  void overwrite_data(std::span<const double> values);

  // Deep copy of data into a fresh leaf (no tape edge).
  Tensor detached_copy(bool requires_grad = false) const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  TensorImpl* raw() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor wrap_impl(std::shared_ptr<TensorImpl>);
};

Tensor wrap_impl(std::shared_ptr<TensorImpl> impl);

// Scratch gradient buffers for one backward traversal, keyed by storage.
// Buffers are distinct from TensorImpl::grad: the traversal works entirely
// in scratch space and only at the end folds results into .grad of tensors
// that require gradients. Repeated backward calls therefore accumulate.
class BackwardPass {
 public:
  // Returns the buffer for impl, zero-initialised on first touch.
  std::vector<double>& buf(const TensorImpl* impl);
  // Returns nullptr if the traversal has not produced a gradient for impl.
  const std::vector<double>* find(const TensorImpl* impl) const;

  std::unordered_map<const TensorImpl*, std::vector<double>>& all() { return grads_; }

 private:
  std::unordered_map<const TensorImpl*, std::vector<double>> grads_;
  friend class Tape;
};

// Single-threaded reverse-mode tape. Every differentiable op appends one
// entry; backward() walks entries newest-to-oldest propagating scratch
// gradients, then accumulates into .grad for requires_grad storages.
class Tape {
 public:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void(BackwardPass&)> backward;
  };

  static Tape& active();

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(Entry entry);
  size_t size() const { return entries_.size(); }
  void clear();

  // Seeds d(loss)/d(loss) = 1 and runs the traversal. loss must be a
  // single-element tensor attached to this tape.
  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
  bool recording_ = true;
};

// RAII guard that pauses tape recording (forward-only evaluation).
struct NoGradGuard {
  NoGradGuard() : prev_(Tape::active().recording()) { Tape::active().set_recording(false); }
  ~NoGradGuard() { Tape::active().set_recording(prev_); }

 private:
  bool prev_;
};

// When enabled, ops verify their outputs are finite and backward verifies
// accumulated gradients are finite. Enabled in the test binaries; training
// instead checks the loss each step to keep the hot path lean.
bool finite_checks();
void set_finite_checks(bool on);
void check_finite(std::span<const double> values, const char* what);

}  // namespace nuta
