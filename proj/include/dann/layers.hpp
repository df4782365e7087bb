#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dann/gemm.hpp"
#include "dann/runtime.hpp"
#include "dann/tensor.hpp"

namespace dann {

enum class Padding { Same, Valid };

template <typename T>
struct ParamRef {
  std::string name;
  std::string role;
  TensorT<T>* value;
  TensorT<T>* grad;
};

// Expands one [C,H,W] image into a [C*kh*kw, OH*OW] patch matrix.
template <typename T>
void im2col(const T* x, int c, int h, int w, int kh, int kw, int pad_y,
            int pad_x, int oh, int ow, T* col) {
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = x + static_cast<size_t>(ch) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + static_cast<size_t>((ch * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy + ky - pad_y;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = T(0);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox + kx - pad_x;
            row[oy * ow + ox] = (ix < 0 || ix >= w) ? T(0) : plane[iy * w + ix];
          }
        }
      }
    }
  }
}

// Scatter-adds a patch matrix back onto a [C,H,W] gradient image.
template <typename T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int pad_y,
                int pad_x, int oh, int ow, T* dx) {
  for (int ch = 0; ch < c; ++ch) {
    T* plane = dx + static_cast<size_t>(ch) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + static_cast<size_t>((ch * kh + ky) * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy + ky - pad_y;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox + kx - pad_x;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

// 2-D cross-correlation (no kernel flip), zero padding in `same` mode.
template <typename T>
class Conv2d {
 public:
  Conv2d(int in_ch, int out_ch, int kh, int kw, Padding pad)
      : in_ch_(in_ch), out_ch_(out_ch), kh_(kh), kw_(kw), pad_(pad),
        w_({out_ch, in_ch, kh, kw}), b_({out_ch}),
        wg_({out_ch, in_ch, kh, kw}), bg_({out_ch}) {
    if (pad_ == Padding::Same && (kh_ % 2 == 0 || kw_ % 2 == 0))
      throw shape_error("conv2d: same padding requires odd kernel, got " +
                        std::to_string(kh_) + "x" + std::to_string(kw_));
  }

  Conv2d(int in_ch, int out_ch, int k, Padding pad)
      : Conv2d(in_ch, out_ch, k, k, pad) {}

  void init(Rng& rng) {
    w_ = he_init<T>({out_ch_, in_ch_, kh_, kw_}, in_ch_ * kh_ * kw_, rng);
    b_.fill(T(0));
    zero_grad();
  }

  TensorT<T> forward(const TensorT<T>& x) {
    check_input(x);
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto [oh, ow] = out_hw(h, w);
    TensorT<T> out({n, out_ch_, oh, ow});
    const int ckk = in_ch_ * kh_ * kw_;
    const int pad_y = pad_ == Padding::Same ? (kh_ - 1) / 2 : 0;
    const int pad_x = pad_ == Padding::Same ? (kw_ - 1) / 2 : 0;
    parallel_for(n, [&](int s) {
      std::vector<T> col(static_cast<size_t>(ckk) * oh * ow);
      im2col(x.data() + static_cast<size_t>(s) * in_ch_ * h * w, in_ch_, h, w,
             kh_, kw_, pad_y, pad_x, oh, ow, col.data());
      T* out_s = out.data() + static_cast<size_t>(s) * out_ch_ * oh * ow;
      gemm<T>(false, false, out_ch_, oh * ow, ckk, T(1), w_.data(), col.data(),
              T(0), out_s);
      for (int oc = 0; oc < out_ch_; ++oc) {
        T* row = out_s + static_cast<size_t>(oc) * oh * ow;
        const T bias = b_[oc];
        for (int i = 0; i < oh * ow; ++i) row[i] += bias;
      }
    });
    cached_x_ = x;
    has_cache_ = true;
    return out;
  }

  // Returns dL/dx; accumulates weight and bias gradients.
  TensorT<T> backward(const TensorT<T>& grad_out) {
    if (!has_cache_) throw state_error("conv2d: backward called before forward");
    const TensorT<T>& x = cached_x_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const auto [oh, ow] = out_hw(h, w);
    if (grad_out.shape() != Shape{n, out_ch_, oh, ow})
      throw shape_error("conv2d backward: grad shape " + shape_str(grad_out.shape()) +
                        " does not match forward output");
    const int ckk = in_ch_ * kh_ * kw_;
    const int pad_y = pad_ == Padding::Same ? (kh_ - 1) / 2 : 0;
    const int pad_x = pad_ == Padding::Same ? (kw_ - 1) / 2 : 0;

    TensorT<T> dx({n, in_ch_, h, w});
    // Per-sample weight/bias contributions land in their own slots and are
    // reduced in sample order, so the result is identical for any thread count.
    std::vector<T> dw_slots(static_cast<size_t>(n) * out_ch_ * ckk);
    std::vector<T> db_slots(static_cast<size_t>(n) * out_ch_);
    parallel_for(n, [&](int s) {
      std::vector<T> col(static_cast<size_t>(ckk) * oh * ow);
      im2col(x.data() + static_cast<size_t>(s) * in_ch_ * h * w, in_ch_, h, w,
             kh_, kw_, pad_y, pad_x, oh, ow, col.data());
      const T* g_s = grad_out.data() + static_cast<size_t>(s) * out_ch_ * oh * ow;
      // dW_s = g_s [oc, ohw] * col^T [ohw, ckk]
      gemm<T>(false, true, out_ch_, ckk, oh * ow, T(1), g_s, col.data(), T(0),
              dw_slots.data() + static_cast<size_t>(s) * out_ch_ * ckk);
      T* db_s = db_slots.data() + static_cast<size_t>(s) * out_ch_;
      for (int oc = 0; oc < out_ch_; ++oc) {
        T acc = T(0);
        const T* row = g_s + static_cast<size_t>(oc) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) acc += row[i];
        db_s[oc] = acc;
      }
      // dcol = W^T [ckk, oc] * g_s [oc, ohw]
      std::vector<T> dcol(static_cast<size_t>(ckk) * oh * ow);
      gemm<T>(true, false, ckk, oh * ow, out_ch_, T(1), w_.data(), g_s, T(0),
              dcol.data());
      col2im_add(dcol.data(), in_ch_, h, w, kh_, kw_, pad_y, pad_x, oh, ow,
                 dx.data() + static_cast<size_t>(s) * in_ch_ * h * w);
    });
    for (int s = 0; s < n; ++s) {
      const T* dw_s = dw_slots.data() + static_cast<size_t>(s) * out_ch_ * ckk;
      for (int i = 0; i < wg_.size(); ++i) wg_[i] += dw_s[i];
      const T* db_s = db_slots.data() + static_cast<size_t>(s) * out_ch_;
      for (int i = 0; i < out_ch_; ++i) bg_[i] += db_s[i];
    }
    return dx;
  }

  void zero_grad() {
    wg_.fill(T(0));
    bg_.fill(T(0));
  }

  std::vector<ParamRef<T>> params(const std::string& prefix, const std::string& role) {
    return {{prefix + ".weight", role, &w_, &wg_},
            {prefix + ".bias", role, &b_, &bg_}};
  }

  TensorT<T>& weights() { return w_; }
  TensorT<T>& bias() { return b_; }
  TensorT<T>& weight_grad() { return wg_; }
  TensorT<T>& bias_grad() { return bg_; }

 private:
  void check_input(const TensorT<T>& x) const {
    if (x.rank() != 4)
      throw shape_error("conv2d: expected [N,C,H,W], got " + shape_str(x.shape()));
    if (x.dim(1) != in_ch_)
      throw shape_error("conv2d: channel mismatch, expected " +
                        std::to_string(in_ch_) + ", got " + std::to_string(x.dim(1)));
    if (pad_ == Padding::Valid && (x.dim(2) < kh_ || x.dim(3) < kw_))
      throw shape_error("conv2d: input " + shape_str(x.shape()) +
                        " smaller than kernel under valid padding");
  }

  std::pair<int, int> out_hw(int h, int w) const {
    if (pad_ == Padding::Same) return {h, w};
    return {h - kh_ + 1, w - kw_ + 1};
  }

  int in_ch_, out_ch_, kh_, kw_;
  Padding pad_;
  TensorT<T> w_, b_, wg_, bg_;
  TensorT<T> cached_x_;
  bool has_cache_ = false;
};

// Non-overlapping 2x2 max pooling, stride 2, trailing odd row/column dropped.
template <typename T>
class MaxPool2x2 {
 public:
  TensorT<T> forward(const TensorT<T>& x) {
    if (x.rank() != 4)
      throw shape_error("maxpool: expected [N,C,H,W], got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < 2 || w < 2)
      throw shape_error("maxpool: spatial dims must be >= 2, got " + shape_str(x.shape()));
    const int oh = h / 2, ow = w / 2;
    TensorT<T> out({n, c, oh, ow});
    argmax_.assign(static_cast<size_t>(out.size()), 0);
    in_shape_ = x.shape();
    parallel_for(n, [&](int s) {
      for (int ch = 0; ch < c; ++ch) {
        const T* plane = x.data() + (static_cast<size_t>(s) * c + ch) * h * w;
        const size_t out_base = (static_cast<size_t>(s) * c + ch) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const int y0 = oy * 2, x0 = ox * 2;
            // Scan order matches flat order, so ties keep the lowest index.
            int best = y0 * w + x0;
            T best_v = plane[best];
            const int cand[3] = {y0 * w + x0 + 1, (y0 + 1) * w + x0,
                                 (y0 + 1) * w + x0 + 1};
            for (int idx : cand) {
              if (plane[idx] > best_v) {
                best_v = plane[idx];
                best = idx;
              }
            }
            out.data()[out_base + static_cast<size_t>(oy) * ow + ox] = best_v;
            argmax_[out_base + static_cast<size_t>(oy) * ow + ox] =
                (s * c + ch) * h * w + best;
          }
        }
      }
    });
    has_cache_ = true;
    return out;
  }

  TensorT<T> backward(const TensorT<T>& grad_out) {
    if (!has_cache_) throw state_error("maxpool: backward called before forward");
    if (grad_out.size() != static_cast<int>(argmax_.size()))
      throw shape_error("maxpool backward: grad shape " + shape_str(grad_out.shape()) +
                        " does not match forward output");
    TensorT<T> dx(in_shape_);
    for (size_t i = 0; i < argmax_.size(); ++i)
      dx[argmax_[i]] += grad_out[static_cast<int>(i)];
    return dx;
  }

  const std::vector<int>& argmax() const { return argmax_; }

 private:
  std::vector<int> argmax_;
  Shape in_shape_;
  bool has_cache_ = false;
};

template <typename T>
class Relu {
 public:
  TensorT<T> forward(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    mask_.assign(static_cast<size_t>(x.size()), 0);
    for (int i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) {
        out[i] = x[i];
        mask_[static_cast<size_t>(i)] = 1;
      }
    }
    has_cache_ = true;
    return out;
  }

  // Subgradient at exactly 0 is 0.
  TensorT<T> backward(const TensorT<T>& grad_out) {
    if (!has_cache_) throw state_error("relu: backward called before forward");
    if (grad_out.size() != static_cast<int>(mask_.size()))
      throw shape_error("relu backward: grad size mismatch");
    TensorT<T> dx(grad_out.shape());
    for (int i = 0; i < grad_out.size(); ++i)
      if (mask_[static_cast<size_t>(i)]) dx[i] = grad_out[i];
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
  bool has_cache_ = false;
};

// y = x W^T + b with W stored [out, in].
template <typename T>
class Dense {
 public:
  Dense(int in, int out)
      : in_(in), out_(out), w_({out, in}), b_({out}), wg_({out, in}), bg_({out}) {}

  void init(Rng& rng) {
    w_ = he_init<T>({out_, in_}, in_, rng);
    b_.fill(T(0));
    zero_grad();
  }

  TensorT<T> forward(const TensorT<T>& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw shape_error("dense: expected [N," + std::to_string(in_) + "], got " +
                        shape_str(x.shape()));
    const int n = x.dim(0);
    TensorT<T> out({n, out_});
    gemm<T>(false, true, n, out_, in_, T(1), x.data(), w_.data(), T(0), out.data());
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < out_; ++j) out.at(r, j) += b_[j];
    cached_x_ = x;
    has_cache_ = true;
    return out;
  }

  TensorT<T> backward(const TensorT<T>& grad_out) {
    if (!has_cache_) throw state_error("dense: backward called before forward");
    const int n = cached_x_.dim(0);
    if (grad_out.shape() != Shape{n, out_})
      throw shape_error("dense backward: grad shape " + shape_str(grad_out.shape()) +
                        " does not match forward output [" + std::to_string(n) + "," +
                        std::to_string(out_) + "]");
    // dW += g^T x, db += column sums of g, dx = g W
    gemm<T>(true, false, out_, in_, n, T(1), grad_out.data(), cached_x_.data(),
            T(1), wg_.data());
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < out_; ++j) bg_[j] += grad_out.at(r, j);
    TensorT<T> dx({n, in_});
    gemm<T>(false, false, n, in_, out_, T(1), grad_out.data(), w_.data(), T(0),
            dx.data());
    return dx;
  }

  void zero_grad() {
    wg_.fill(T(0));
    bg_.fill(T(0));
  }

  std::vector<ParamRef<T>> params(const std::string& prefix, const std::string& role) {
    return {{prefix + ".weight", role, &w_, &wg_},
            {prefix + ".bias", role, &b_, &bg_}};
  }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  TensorT<T>& weights() { return w_; }
  TensorT<T>& bias() { return b_; }
  TensorT<T>& weight_grad() { return wg_; }
  TensorT<T>& bias_grad() { return bg_; }

 private:
  int in_, out_;
  TensorT<T> w_, b_, wg_, bg_;
  TensorT<T> cached_x_;
  bool has_cache_ = false;
};

// Gradient reversal: identity forward, -lambda * g backward, both exact.
template <typename T>
TensorT<T> grl_forward(const TensorT<T>& x, T lambda) {
  if (lambda < T(0)) throw config_error("grl: lambda must be nonnegative");
  return x;
}

template <typename T>
TensorT<T> grl_backward(const TensorT<T>& grad_out, T lambda) {
  if (lambda < T(0)) throw config_error("grl: lambda must be nonnegative");
  TensorT<T> dx(grad_out.shape());
  const T neg = -lambda;
  for (int i = 0; i < grad_out.size(); ++i) dx[i] = neg * grad_out[i];
  return dx;
}

// Mean softmax cross-entropy over rows, with the row max subtracted before
// exponentiation. Returns (loss, dL/dlogits).
template <typename T>
std::pair<double, TensorT<T>> softmax_xent(const TensorT<T>& logits,
                                           const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw shape_error("softmax_xent: expected [N,K] logits, got " +
                      shape_str(logits.shape()));
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw shape_error("softmax_xent: " + std::to_string(labels.size()) +
                      " labels for " + std::to_string(n) + " rows");
  TensorT<T> grad({n, k});
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const int y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= k)
      throw label_error("softmax_xent: label " + std::to_string(y) +
                        " out of range [0," + std::to_string(k) + ")");
    double row_max = logits.at(r, 0);
    for (int j = 1; j < k; ++j) row_max = std::max(row_max, static_cast<double>(logits.at(r, j)));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits.at(r, j)) - row_max);
    const double log_z = std::log(z);
    loss += -(static_cast<double>(logits.at(r, y)) - row_max - log_z);
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(logits.at(r, j)) - row_max) / z;
      grad.at(r, j) = static_cast<T>((p - (j == y ? 1.0 : 0.0)) / n);
    }
  }
  loss /= n;
  if (!std::isfinite(loss)) throw numeric_error("softmax_xent: non-finite loss");
  return {loss, std::move(grad)};
}

}  // namespace dann
