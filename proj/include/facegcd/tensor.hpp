#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <new>
#include <numeric>
#include <vector>

#include "facegcd/common.hpp"

namespace facegcd {

using Shape = std::vector<int>;

// Fixed 64-byte alignment for all tensor storage, so SIMD kernel dispatch
// never depends on where the heap happened to place a buffer. Without this,
// -march=native builds can differ by 1 ulp between runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + alignment - 1) / alignment * alignment;
    void* p = std::aligned_alloc(alignment, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const { return false; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

// Dense row-major float tensor with value semantics. All model math runs on
// these; autograd wraps them in graph nodes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}
  Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, const std::vector<float>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  FloatBuffer& vec() { return data_; }
  const FloatBuffer& vec() const { return data_; }

  float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  float& at(std::initializer_list<int> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  float at(std::initializer_list<int> idx) const { return data_[static_cast<size_t>(offset(idx))]; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  float max_abs() const {
    float m = 0.0f;
    for (float v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, float v) { return Tensor(std::move(s), v); }

  static Tensor randn(Shape s, Rng& rng, float stddev = 1.0f) {
    Tensor t(std::move(s));
    std::normal_distribution<float> d(0.0f, stddev);
    for (auto& v : t.data_) v = d(rng);
    return t;
  }

  static Tensor rand_uniform(Shape s, Rng& rng, float lo, float hi) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& v : t.data_) v = d(rng);
    return t;
  }

 private:
  std::int64_t offset(std::initializer_list<int> idx) const {
    std::int64_t off = 0;
    size_t i = 0;
    for (int v : idx) {
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  Shape shape_;
  FloatBuffer data_;
};

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace facegcd
