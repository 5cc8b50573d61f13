#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "apdr/errors.hpp"

namespace apdr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Every buffer starts on a 64-byte boundary. Eigen chooses between scalar and
// packet code (and so the summation order) from the address, which otherwise
// varies from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Dense row-major array. `grad` is empty until something accumulates into it.
template <class T>
struct Tensor {
  using value_type = T;

  Shape shape;
  Buffer<T> data;
  bool requires_grad = false;
  Buffer<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {
    check_shape();
  }
  Tensor(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) {
      throw ConfigError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    }
    check_shape();
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  bool has_grad() const { return !grad.empty(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void zero_grad() { grad.assign(data.size(), T(0)); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    out.grad.assign(grad.begin(), grad.end());
    return out;
  }

 private:
  void check_shape() const {
    for (auto e : shape) {
      if (e == 0) throw ConfigError("tensor extents must be positive, got " + shape_str(shape));
    }
  }
};

}  // namespace apdr
