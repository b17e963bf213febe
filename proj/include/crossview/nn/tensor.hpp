#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "crossview/check.hpp"

namespace crossview::nn {

// Dense row-major tensor. Rank 2 for almost everything; rank 3/4 appear only
// around the optional aerial convolution.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
  }
  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    CV_REQUIRE(data_.size() == static_cast<size_t>(numel_of(shape_)),
               "tensor data size does not match shape");
  }

  static Tensor row(std::vector<T> values) {
    int n = static_cast<int>(values.size());
    return Tensor({1, n}, std::move(values));
  }
  static Tensor scalar(T v) { return Tensor({1, 1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const { return rank() == 2 ? shape_[1] : numel(); }
  int numel() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](int i) { return data_[static_cast<size_t>(i)]; }
  T operator[](int i) const { return data_[static_cast<size_t>(i)]; }
  T& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  T at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

  static int numel_of(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
      CV_REQUIRE(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace crossview::nn
