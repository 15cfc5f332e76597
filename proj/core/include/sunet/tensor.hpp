#pragma once

#include <atomic>
#include <algorithm>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sunet/rng.hpp"

namespace sunet {

// Byte accounting for live Tensor buffers. The bench subcommand reads the
// high-water mark to report an op's working set; outside of that it is a
// couple of relaxed atomic adds per allocation.
namespace workset {
void add(int64_t bytes);
void sub(int64_t bytes);
void reset_peak();
int64_t peak_bytes();
int64_t current_bytes();
}  // namespace workset

// Dense row-major array, rank 1 or 2 in practice. This is plain storage;
// autodiff graph structure lives in Value.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
    workset::add(bytes());
  }

  Tensor(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    assert(static_cast<int64_t>(data_.size()) == numel_of(shape_));
    workset::add(bytes());
  }

  Tensor(const Tensor& other) : shape_(other.shape_), data_(other.data_) {
    workset::add(bytes());
  }
  Tensor(Tensor&& other) noexcept
      : shape_(std::move(other.shape_)), data_(std::move(other.data_)) {
    other.shape_.clear();
  }
  Tensor& operator=(const Tensor& other) {
    if (this != &other) {
      workset::sub(bytes());
      shape_ = other.shape_;
      data_ = other.data_;
      workset::add(bytes());
    }
    return *this;
  }
  Tensor& operator=(Tensor&& other) noexcept {
    if (this != &other) {
      workset::sub(bytes());
      shape_ = std::move(other.shape_);
      data_ = std::move(other.data_);
      other.shape_.clear();
    }
    return *this;
  }
  ~Tensor() { workset::sub(bytes()); }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor uniform(std::vector<int64_t> shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(rng.uniform(double(lo), double(hi)));
    return t;
  }

  static Tensor normal(std::vector<int64_t> shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(double(mean) + double(stddev) * rng.normal());
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t bytes() const { return numel() * static_cast<int64_t>(sizeof(T)); }

  // Rank-2 accessors.
  int64_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int64_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? 1 : 0); }
  T& at(int64_t r, int64_t c) { return data_[r * cols() + c]; }
  const T& at(int64_t r, int64_t c) const { return data_[r * cols() + c]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<int64_t>());
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

// Integer index table (e.g. N x 7 neighbor slots), kept outside the autodiff
// graph.
struct IndexMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint32_t> data;

  IndexMatrix() = default;
  IndexMatrix(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0) {
    workset::add(bytes());
  }
  IndexMatrix(const IndexMatrix& o) : rows(o.rows), cols(o.cols), data(o.data) {
    workset::add(bytes());
  }
  IndexMatrix(IndexMatrix&& o) noexcept
      : rows(o.rows), cols(o.cols), data(std::move(o.data)) {
    o.rows = o.cols = 0;
  }
  IndexMatrix& operator=(IndexMatrix o) noexcept {
    std::swap(rows, o.rows);
    std::swap(cols, o.cols);
    std::swap(data, o.data);
    return *this;
  }
  ~IndexMatrix() { workset::sub(bytes()); }

  int64_t bytes() const { return static_cast<int64_t>(data.size() * sizeof(uint32_t)); }
  uint32_t& at(int64_t r, int64_t c) { return data[r * cols + c]; }
  uint32_t at(int64_t r, int64_t c) const { return data[r * cols + c]; }
};

}  // namespace sunet
