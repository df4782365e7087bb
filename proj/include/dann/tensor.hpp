#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dann/error.hpp"

namespace dann {

using Shape = std::vector<int>;

// Validates every dimension is >= 1 and returns the element count.
int shape_size(const Shape& shape);

std::string shape_str(const Shape& shape);

// Dense row-major tensor. Element (i, j, ...) of shape (d0, d1, ...) lives at
// flat offset i*(d1*d2*...) + j*(d2*...) + ...
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0))
      : shape_(std::move(shape)),
        data_(static_cast<size_t>(shape_size(shape_)), fill) {}

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int i, int j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at(int i, int j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }

  T& at(int n, int c, int y, int x) {
    return data_[flat4(n, c, y, x)];
  }
  const T& at(int n, int c, int y, int x) const {
    return data_[flat4(n, c, y, x)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  // Reinterprets the flat buffer under a new shape with equal element count.
  TensorT reshaped(Shape new_shape) const {
    if (shape_size(new_shape) != size())
      throw shape_error("reshape: element count mismatch (" +
                        shape_str(shape_) + " -> " + shape_str(new_shape) + ")");
    TensorT out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  size_t flat4(int n, int c, int y, int x) const {
    return static_cast<size_t>(
        ((n * shape_[1] + c) * shape_[2] + y) * static_cast<size_t>(shape_[3]) + x);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
TensorT<T> tensor_new(Shape shape, T fill) {
  return TensorT<T>(std::move(shape), fill);
}

// PCG-XSH-RR 64/32 (O'Neill). State transition:
//   state <- state * 6364136223846793005 + inc        (inc odd, from stream)
// Output from the pre-transition state:
//   xorshifted = ((state >> 18) ^ state) >> 27
//   rot        = state >> 59
//   out        = rotr32(xorshifted, rot)
// The same seed yields the same sequence on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();

  // Unbiased draw from [0, n).
  std::uint32_t next_below(std::uint32_t n);

  // 53-bit uniform in [0, 1).
  double next_double();

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal();

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Fisher-Yates shuffle of [0, n) driven by rng.
std::vector<int> shuffled_indices(int n, Rng& rng);

// He-normal init: i.i.d. N(0, 2/fan_in). Biases stay zero elsewhere.
template <typename T>
TensorT<T> he_init(Shape shape, int fan_in, Rng& rng) {
  if (fan_in < 1) throw config_error("he_init: fan_in must be >= 1");
  TensorT<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

// Central-difference gradient oracle, 64-bit. Independent of every analytic
// backward pass it is used to check.
Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f,
                          const Tensor64& x, double h = 1e-5);

// max over coordinates of |a-b| / max(|a|, |b|, 1e-8)
double max_rel_err(const Tensor64& a, const Tensor64& b);

}  // namespace dann
