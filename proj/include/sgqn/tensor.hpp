#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgqn {

// Dense row-major tensor. The scalar type is templated so the same code
// runs in float for training and double for finite-difference oracles.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return Tensor({1}, v); }
  static Tensor from(std::vector<int> s, std::vector<T> values) {
    Tensor t;
    t.shape = std::move(s);
    if (static_cast<int64_t>(values.size()) != numel_of(t.shape))
      throw std::invalid_argument("tensor data size does not match shape");
    t.data = std::move(values);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  T min() const { return *std::min_element(data.begin(), data.end()); }
  T max() const { return *std::max_element(data.begin(), data.end()); }
  T sum() const { return std::accumulate(data.begin(), data.end(), T(0)); }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace sgqn
