#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hnet/errors.hpp"

namespace hnet {

/// Cache-line aligned storage. Vectorized reductions peel a head that depends
/// on the address, so alignment fixed at allocation keeps float results
/// independent of where the heap places a buffer.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }

  template <class U>
  bool operator==(const AlignedAllocator<U, Align>&) const noexcept {
    return true;
  }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// NHWC extents of a rank-4 tensor. Vectors are stored as (n, 1, 1, c).
struct Shape {
  std::size_t n = 0, h = 0, w = 0, c = 0;

  constexpr std::size_t size() const noexcept { return n * h * w * c; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
           std::to_string(c) + ")";
  }
};

constexpr Shape vector_shape(std::size_t n, std::size_t c) noexcept { return {n, 1, 1, c}; }
constexpr Shape scalar_shape() noexcept { return {1, 1, 1, 1}; }

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    if (data_.size() != shape_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
  }

  static Tensor scalar(T v) { return Tensor(scalar_shape(), v); }
  static Tensor vector(std::vector<T> v) {
    const auto len = v.size();
    return Tensor(vector_shape(1, len), std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
    return ((n * shape_.h + y) * shape_.w + x) * shape_.c + ch;
  }
  T& at(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) noexcept {
    return data_[index(n, y, x, ch)];
  }
  const T& at(std::size_t n, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
    return data_[index(n, y, x, ch)];
  }

  T item() const {
    if (shape_ != scalar_shape()) throw ShapeError("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    if (o.shape_ != shape_) throw ShapeError("+= shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Element-type conversion (float <-> double).
  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::copy(data_.begin(), data_.end(), out.data().begin());
    return out;
  }

  /// Samples [first, first + count) along the batch axis.
  Tensor slice_batch(std::size_t first, std::size_t count) const {
    const std::size_t per = shape_.h * shape_.w * shape_.c;
    Tensor out({count, shape_.h, shape_.w, shape_.c});
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * per), count * per, out.data_.begin());
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  AlignedVector<T> data_;
};

/// Stacks single-sample tensors of equal shape along the batch axis.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>* const> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  Shape s = items.front()->shape();
  std::size_t total = 0;
  for (const auto* t : items) {
    const Shape& o = t->shape();
    if (o.h != s.h || o.w != s.w || o.c != s.c) throw ShapeError("stack_batch: shape mismatch " + o.str());
    total += o.n;
  }
  Tensor<T> out({total, s.h, s.w, s.c});
  std::size_t off = 0;
  for (const auto* t : items) {
    std::copy(t->data().begin(), t->data().end(), out.ptr() + off);
    off += t->size();
  }
  return out;
}

}  // namespace hnet
