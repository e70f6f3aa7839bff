#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "landseg/common.hpp"

namespace landseg {

namespace detail {

/// Allocator whose value-initializing construct() is a no-op, so large
/// buffers that are fully overwritten anyway skip the zeroing pass.
/// Explicitly initialized operations (fill, copy) behave as usual.
template <class T>
struct uninit_allocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = uninit_allocator<U>;
  };
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) > 0) ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles, rank 1..4. The NN code uses NCHW
/// layout; points gathered from feature maps live in Eigen matrices instead.
/// The default constructor zero-fills; `uninit` skips the fill for buffers
/// every element of which is about to be written.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(), 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor uninit(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(t.checked_size());
    return t;
  }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int a) { return data_[static_cast<std::size_t>(a)]; }
  double& at(int a, int b) { return data_[idx2(a, b)]; }
  double& at(int a, int b, int c) { return data_[idx3(a, b, c)]; }
  double& at(int a, int b, int c, int d) { return data_[idx4(a, b, c, d)]; }
  double at(int a) const { return data_[static_cast<std::size_t>(a)]; }
  double at(int a, int b) const { return data_[idx2(a, b)]; }
  double at(int a, int b, int c) const { return data_[idx3(a, b, c)]; }
  double at(int a, int b, int c, int d) const { return data_[idx4(a, b, c, d)]; }

  void fill(double v) { data_.assign(data_.size(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// "(a,b,c)" style shape string for error messages.
  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::size_t checked_size() const {
    std::size_t n = 1;
    for (int d : shape_) {
      check(d > 0, "Tensor: dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t idx2(int a, int b) const {
    return static_cast<std::size_t>(a) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(b);
  }
  std::size_t idx3(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(b)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(c);
  }
  std::size_t idx4(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(b)) *
                static_cast<std::size_t>(shape_[2]) +
            static_cast<std::size_t>(c)) *
               static_cast<std::size_t>(shape_[3]) +
           static_cast<std::size_t>(d);
  }

  std::vector<int> shape_;
  std::vector<double, detail::uninit_allocator<double>> data_;
};

inline void add_inplace(Tensor& dst, const Tensor& src) {
  check(dst.same_shape(src), "add_inplace: shape mismatch " + dst.shape_str() + " vs " + src.shape_str());
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

inline void scale_inplace(Tensor& t, double f) {
  double* d = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) d[i] *= f;
}

}  // namespace landseg
