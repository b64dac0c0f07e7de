#pragma once

#include <atomic>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "mice/common.hpp"

namespace mice {

// Process-wide accounting of tensor buffer bytes. The bench harness reads the
// high-water mark instead of OS RSS so the number is portable.
class MemoryMeter {
 public:
  static void on_alloc(std::size_t bytes) noexcept;
  static void on_free(std::size_t bytes) noexcept;
  static std::size_t current() noexcept;
  static std::size_t peak() noexcept;
  /// Resets the high-water mark to the current live byte count.
  static void reset_peak() noexcept;
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    MemoryMeter::on_alloc(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryMeter::on_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor. `grad` is empty until something accumulates into it.
template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> data;
  bool requires_grad = false;
  Buffer<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {
    check_shape();
  }
  Tensor(Shape s, std::initializer_list<T> values) : shape(std::move(s)), data(values) {
    check_shape();
    if (data.size() != shape_numel(shape)) {
      throw DimensionError("tensor: " + std::to_string(data.size()) + " values for shape " +
                           shape_str(shape));
    }
  }
  Tensor(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (data.size() != shape_numel(shape)) {
      throw DimensionError("tensor: buffer size does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }

  std::size_t numel() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  /// Size of the last axis.
  std::size_t cols() const noexcept { return shape.empty() ? 1 : shape.back(); }
  /// Product of all leading axes.
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : numel() / cols(); }

  bool has_grad() const noexcept { return !grad.empty(); }
  Buffer<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
  void zero_grad() {
    if (has_grad()) std::fill(grad.begin(), grad.end(), T(0));
  }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  /// Value copy in another precision; gradient state is not carried over.
  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    out.requires_grad = requires_grad;
    return out;
  }

 private:
  void check_shape() const {
    for (std::size_t s : shape) {
      if (s == 0) throw DimensionError("tensor: zero-sized axis in shape " + shape_str(shape));
    }
  }
};

/// True when every element is finite.
template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace mice
