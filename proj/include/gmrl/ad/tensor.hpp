#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmrl::ad {

// Dense row-major 2-D array. Sets of vehicles, minibatches and feature
// vectors are all expressed as (rows x cols).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Tensor: data size " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " + shape_string());
    }
  }

  static Tensor scalar(T v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  bool operator==(const Tensor& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// out(r x n) += a(r x k) * b(k x n)
template <typename T>
void gemm_acc(const T* a, const T* b, T* out, std::size_t r, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    T* out_row = out + i * n;
    const T* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a_row[p];
      if (av == T(0)) continue;
      const T* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
    }
  }
}

// out(r x k) += g(r x n) * b(k x n)^T
template <typename T>
void gemm_nt_acc(const T* g, const T* b, T* out, std::size_t r, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const T* g_row = g + i * n;
    T* out_row = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* b_row = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
      out_row[p] += acc;
    }
  }
}

// out(k x n) += a(r x k)^T * g(r x n)
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* out, std::size_t r, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const T* a_row = a + i * k;
    const T* g_row = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a_row[p];
      if (av == T(0)) continue;
      T* out_row = out + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * g_row[j];
    }
  }
}

}  // namespace gmrl::ad
