#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "resadapt/common.hpp"

namespace resadapt {

// Dense row-major n-d array with an optional gradient buffer of the same
// shape. float is the production precision; double exists for gradient
// checking.
template <typename T>
struct TensorT {
  std::vector<std::int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless ensure_grad() was called

  TensorT() = default;
  explicit TensorT(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel()), T(0));
  }
  TensorT(std::vector<std::int64_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel())
      throw std::invalid_argument("tensor data size does not match shape");
  }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(
        ((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>(
        ((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T& at2(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
  T at2(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * shape[1] + j)];
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape == b.shape;
}

std::string shape_str(const std::vector<std::int64_t>& shape);

// Toggles NaN/Inf hard errors after layer ops. On by default in debug
// builds; tests and the trainer turn it on explicitly.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

template <typename T>
void check_finite(const TensorT<T>& t, const char* what);

}  // namespace resadapt
