#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dann/layers.hpp"
#include "dann/tensor.hpp"

namespace dann {

enum class LrMode { InverseDecay, Cosine };

struct ScheduleConfig {
  double mu0 = 5e-4;
  double alpha = 10.0;
  double beta = 0.75;
  LrMode lr_mode = LrMode::InverseDecay;
  int total_batches = 1;
};

// mu0 / (1 + alpha*p)^beta
inline double lr_inverse_decay(double p, const ScheduleConfig& cfg) {
  if (p < 0.0 || p > 1.0)
    throw config_error("lr_inverse_decay: p=" + std::to_string(p) + " outside [0,1]");
  return cfg.mu0 / std::pow(1.0 + cfg.alpha * p, cfg.beta);
}

// (1 + cos(t*pi/T)) * mu0 / 2 at batch t of T
inline double lr_cosine(int t, const ScheduleConfig& cfg) {
  if (t < 0 || t > cfg.total_batches)
    throw config_error("lr_cosine: t=" + std::to_string(t) + " outside [0," +
                       std::to_string(cfg.total_batches) + "]");
  const double pi = 3.14159265358979323846;
  return 0.5 * (1.0 + std::cos(t * pi / cfg.total_batches)) * cfg.mu0;
}

// 2 / (1 + exp(-10p)) - 1, the adaptation weight ramp from 0 toward 1.
inline double lambda_schedule(double p) {
  if (p < 0.0 || p > 1.0)
    throw config_error("lambda_schedule: p=" + std::to_string(p) + " outside [0,1]");
  return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
}

// Classical momentum: v <- m*v + g, theta <- theta - mu*v.
// With m = 0 this is the plain update theta - mu*g.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {
    if (momentum < 0.0 || momentum >= 1.0)
      throw config_error("sgd: momentum must be in [0,1), got " + std::to_string(momentum));
  }

  void attach(const std::vector<ParamRef<T>>& params) {
    velocity_.clear();
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.value->shape());
  }

  size_t slots() const { return velocity_.size(); }
  double momentum() const { return momentum_; }

  // grad_scale folds a loss weight (the lambda on the domain head) into the
  // gradient before the velocity update.
  void step(size_t slot, const ParamRef<T>& p, double mu, double grad_scale = 1.0) {
    TensorT<T>& v = velocity_[slot];
    if (!v.same_shape(*p.value) || !p.grad->same_shape(*p.value))
      throw shape_error("sgd: shape mismatch for " + p.name);
    const T m = static_cast<T>(momentum_);
    const T scale = static_cast<T>(grad_scale);
    const T lr = static_cast<T>(mu);
    TensorT<T>& theta = *p.value;
    const TensorT<T>& g = *p.grad;
    for (int i = 0; i < theta.size(); ++i) {
      v[i] = m * v[i] + scale * g[i];
      theta[i] -= lr * v[i];
    }
  }

 private:
  double momentum_;
  std::vector<TensorT<T>> velocity_;
};

// One-tensor form used directly by tests: v is owned by the caller.
template <typename T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& velocity,
              double momentum, double mu) {
  if (!param.same_shape(grad) || !param.same_shape(velocity))
    throw shape_error("sgd_step: param/grad/velocity shapes differ");
  const T m = static_cast<T>(momentum);
  const T lr = static_cast<T>(mu);
  for (int i = 0; i < param.size(); ++i) {
    velocity[i] = m * velocity[i] + grad[i];
    param[i] -= lr * velocity[i];
  }
}

}  // namespace dann
