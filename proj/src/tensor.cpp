#include "dann/tensor.hpp"

#include <atomic>
#include <cmath>

#include "dann/runtime.hpp"

namespace dann {

namespace {
std::atomic<int> g_max_threads{1};
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

int max_threads() { return g_max_threads.load(std::memory_order_relaxed); }

void set_max_threads(int n) {
  g_max_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

int shape_size(const Shape& shape) {
  if (shape.empty()) throw shape_error("tensor shape must have at least one dimension");
  long long n = 1;
  for (int d : shape) {
    if (d < 1) throw shape_error("invalid tensor dimension " + std::to_string(d) +
                                 " in " + shape_str(shape));
    n *= d;
    if (n > (1LL << 31) - 1) throw shape_error("tensor too large: " + shape_str(shape));
  }
  return static_cast<int>(n);
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  inc_ = (stream << 1u) | 1u;
  state_ = 0;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Rng::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const std::uint32_t xorshifted =
      static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint32_t Rng::next_below(std::uint32_t n) {
  if (n == 0) throw config_error("Rng::next_below: n must be positive");
  // Rejection sampling keeps the draw unbiased.
  const std::uint32_t threshold = (0u - n) % n;
  for (;;) {
    const std::uint32_t r = next_u32();
    if (r >= threshold) return r % n;
  }
}

double Rng::next_double() {
  const std::uint64_t hi = next_u32() >> 5;   // 27 bits
  const std::uint64_t lo = next_u32() >> 6;   // 26 bits
  return static_cast<double>((hi << 26) | lo) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - next_double();  // (0, 1]
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(kTwoPi * u2);
  has_spare_ = true;
  return r * std::cos(kTwoPi * u2);
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(static_cast<std::uint32_t>(i + 1)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

Tensor64 finite_diff_grad(const std::function<double(const Tensor64&)>& f,
                          const Tensor64& x, double h) {
  if (!(h > 0.0)) throw config_error("finite_diff_grad: h must be positive");
  Tensor64 grad(x.shape());
  Tensor64 probe = x;
  for (int i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw numeric_error("finite_diff_grad: non-finite evaluation at coordinate " +
                          std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double max_rel_err(const Tensor64& a, const Tensor64& b) {
  if (!a.same_shape(b))
    throw shape_error("max_rel_err: shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-8});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace dann
