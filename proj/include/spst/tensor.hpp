#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "spst/errors.hpp"

namespace spst {

// Dense row-major tensor, last axis fastest. Grad storage lives alongside the
// values so a parameter and its gradient can never disagree on shape.
template <typename T>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until ensure_grad(); same length as data after

  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shp) : shape(std::move(shp)) {
    data.assign(checked_numel(shape), T(0));
  }

  TensorT(std::vector<int64_t> shp, std::vector<T> values)
      : shape(std::move(shp)), data(std::move(values)) {
    SPST_CHECK(static_cast<int64_t>(data.size()) == checked_numel(shape),
               "tensor data length does not match shape");
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int64_t dim(int axis) const {
    SPST_CHECK(axis >= 0 && axis < rank(), "axis out of range");
    return shape[axis];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }

  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  static int64_t checked_numel(const std::vector<int64_t>& shp) {
    int64_t n = 1;
    for (int64_t d : shp) {
      SPST_CHECK(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace spst
