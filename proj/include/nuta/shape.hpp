#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "nuta/error.hpp"

namespace nuta {

// Dense row-major tensor extents. Every extent is >= 1; rank 0 means scalar.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) { validate(); }

  int64_t rank() const { return static_cast<int64_t>(dims_.size()); }

  int64_t operator[](int64_t axis) const {
    require(axis >= 0 && axis < rank(), "shape: axis ", axis, " out of range for ", str());
    return dims_[static_cast<size_t>(axis)];
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : dims_) n *= d;
    return n;
  }

  const std::vector<int64_t>& dims() const { return dims_; }

  // Row-major strides, in elements. Scalars get an empty stride list.
  std::vector<int64_t> strides() const {
    std::vector<int64_t> s(dims_.size(), 1);
    for (int64_t i = rank() - 2; i >= 0; --i)
      s[static_cast<size_t>(i)] = s[static_cast<size_t>(i + 1)] * dims_[static_cast<size_t>(i + 1)];
    return s;
  }

  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  bool operator!=(const Shape& other) const { return dims_ != other.dims_; }

  std::string str() const {
    std::string out = "[";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(dims_[i]);
    }
    out += "]";
    return out;
  }

 private:
  void validate() const {
    for (int64_t d : dims_)
      require(d >= 1, "shape: extents must be >= 1, got ", str());
  }

  std::vector<int64_t> dims_;
};

}  // namespace nuta
