#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dann/data.hpp"
#include "dann/layers.hpp"
#include "dann/optim.hpp"

namespace dann {

// Five conv layers with interleaved pooling: 80x80x4 in, 5x5x48 out,
// flattened to the 1200-dim descriptor both heads share.
template <typename T>
class FeatureExtractor {
 public:
  TensorT<T> forward(const TensorT<T>& x) {
    auto h = pool1_.forward(relu1_.forward(conv1_.forward(x)));
    h = relu2_.forward(conv2_.forward(h));
    h = pool3_.forward(relu3_.forward(conv3_.forward(h)));
    h = relu4_.forward(conv4_.forward(h));
    h = relu5_.forward(conv5_.forward(h));
    h = pool5b_.forward(pool5a_.forward(h));
    pre_flatten_ = h.shape();
    const int n = h.dim(0);
    return h.reshaped({n, h.size() / n});
  }

  TensorT<T> backward(const TensorT<T>& grad_features) {
    auto g = grad_features.reshaped(pre_flatten_);
    g = pool5a_.backward(pool5b_.backward(g));
    g = conv5_.backward(relu5_.backward(g));
    g = conv4_.backward(relu4_.backward(g));
    g = conv3_.backward(relu3_.backward(pool3_.backward(g)));
    g = conv2_.backward(relu2_.backward(g));
    g = conv1_.backward(relu1_.backward(pool1_.backward(g)));
    return g;
  }

  void init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    conv4_.init(rng);
    conv5_.init(rng);
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    const std::string role = "feature_extractor";
    for (auto& p : conv1_.params("feature.conv1", role)) out.push_back(p);
    for (auto& p : conv2_.params("feature.conv2", role)) out.push_back(p);
    for (auto& p : conv3_.params("feature.conv3", role)) out.push_back(p);
    for (auto& p : conv4_.params("feature.conv4", role)) out.push_back(p);
    for (auto& p : conv5_.params("feature.conv5", role)) out.push_back(p);
    return out;
  }

  Conv2d<T>& conv(int i) {
    switch (i) {
      case 1: return conv1_;
      case 2: return conv2_;
      case 3: return conv3_;
      case 4: return conv4_;
      case 5: return conv5_;
      default: throw config_error("conv index must be 1..5");
    }
  }

 private:
  Conv2d<T> conv1_{4, 32, 7, Padding::Same};
  Conv2d<T> conv2_{32, 32, 3, Padding::Same};
  Conv2d<T> conv3_{32, 48, 3, Padding::Same};
  Conv2d<T> conv4_{48, 48, 3, Padding::Same};
  Conv2d<T> conv5_{48, 48, 3, Padding::Same};
  Relu<T> relu1_, relu2_, relu3_, relu4_, relu5_;
  MaxPool2x2<T> pool1_, pool3_, pool5a_, pool5b_;
  Shape pre_flatten_;
};

// Dense stack with ReLU on hidden layers and linear logits. Keeps the last
// hidden activation around for feature projection.
template <typename T>
class MlpHead {
 public:
  MlpHead(std::initializer_list<int> dims, std::string prefix, std::string role)
      : prefix_(std::move(prefix)), role_(std::move(role)) {
    const std::vector<int> d(dims);
    for (size_t i = 0; i + 1 < d.size(); ++i) fcs_.emplace_back(d[i], d[i + 1]);
    relus_.resize(fcs_.size() > 0 ? fcs_.size() - 1 : 0);
  }

  TensorT<T> forward(const TensorT<T>& x) {
    TensorT<T> h = x;
    for (size_t i = 0; i < fcs_.size(); ++i) {
      h = fcs_[i].forward(h);
      if (i + 1 < fcs_.size()) {
        h = relus_[i].forward(h);
        if (i + 2 == fcs_.size()) last_hidden_ = h;
      }
    }
    return h;
  }

  TensorT<T> backward(const TensorT<T>& grad_out) {
    TensorT<T> g = grad_out;
    for (size_t i = fcs_.size(); i-- > 0;) {
      g = fcs_[i].backward(g);
      if (i > 0) g = relus_[i - 1].backward(g);
    }
    return g;
  }

  void init(Rng& rng) {
    for (auto& fc : fcs_) fc.init(rng);
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (size_t i = 0; i < fcs_.size(); ++i)
      for (auto& p : fcs_[i].params(prefix_ + ".fc" + std::to_string(i + 1), role_))
        out.push_back(p);
    return out;
  }

  // Activation after the last hidden ReLU from the most recent forward.
  const TensorT<T>& last_hidden() const { return last_hidden_; }

  Dense<T>& fc(size_t i) { return fcs_.at(i); }
  size_t layer_count() const { return fcs_.size(); }

 private:
  std::vector<Dense<T>> fcs_;
  std::vector<Relu<T>> relus_;
  TensorT<T> last_hidden_;
  std::string prefix_, role_;
};

constexpr int kFeatureDim = 1200;  // 5*5*48 descriptor

// Feature extractor plus label predictor (1200->100->100->3) and domain
// classifier (1200->100->2) behind a gradient reversal layer.
template <typename T>
struct DannNetwork {
  FeatureExtractor<T> feature;
  MlpHead<T> label_head{{kFeatureDim, 100, 100, kNumClasses},
                        "label", "label_predictor"};
  MlpHead<T> domain_head{{kFeatureDim, 100, 2}, "domain", "domain_classifier"};
  double lambda = 0.0;

  TensorT<T> features(const TensorT<T>& x) { return feature.forward(x); }

  TensorT<T> label_logits(const TensorT<T>& f) { return label_head.forward(f); }

  TensorT<T> domain_logits(const TensorT<T>& f) {
    return domain_head.forward(grl_forward(f, static_cast<T>(lambda)));
  }

  std::vector<ParamRef<T>> parameters() {
    auto out = feature.params();
    for (auto& p : label_head.params()) out.push_back(p);
    for (auto& p : domain_head.params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.grad->fill(T(0));
  }
};

template <typename T = float>
DannNetwork<T> build_network(Rng& rng) {
  DannNetwork<T> net;
  net.feature.init(rng);
  net.label_head.init(rng);
  net.domain_head.init(rng);
  return net;
}

// Batch-mean cross-entropy of the label predictor on source images.
template <typename T>
double label_loss(DannNetwork<T>& net, const TensorT<T>& x_source,
                  const std::vector<int>& y_source) {
  const auto f = net.features(x_source);
  return softmax_xent(net.label_logits(f), y_source).first;
}

// Batch-mean cross-entropy of the domain classifier over a mixed batch.
template <typename T>
double domain_loss(DannNetwork<T>& net, const TensorT<T>& x,
                   const std::vector<int>& d) {
  const auto f = net.features(x);
  return softmax_xent(net.domain_logits(f), d).first;
}

struct StepReport {
  double label_loss = 0.0;
  double domain_loss = 0.0;
  double objective = 0.0;  // label_loss - lambda * domain_loss
  double lambda = 0.0;
  double learning_rate = 0.0;
  double progress = 0.0;
};

struct LambdaPolicy {
  enum class Mode { Scheduled, Fixed, Zero };
  Mode mode = Mode::Scheduled;
  double value = 0.0;

  double resolve(double p) const {
    switch (mode) {
      case Mode::Scheduled: return lambda_schedule(p);
      case Mode::Fixed: return value;
      default: return 0.0;
    }
  }

  static LambdaPolicy scheduled() { return {Mode::Scheduled, 0.0}; }
  static LambdaPolicy fixed(double v) { return {Mode::Fixed, v}; }
  static LambdaPolicy zero() { return {Mode::Zero, 0.0}; }
};

inline double resolve_lr(double p, int t, const ScheduleConfig& sched) {
  return sched.lr_mode == LrMode::Cosine ? lr_cosine(t, sched)
                                         : lr_inverse_decay(p, sched);
}

// One saddle-point update. Label loss backpropagates through the label head
// and the extractor; domain loss through the domain head and, scaled by
// -lambda via the reversal layer, the extractor. The domain head's own update
// runs at mu * lambda.
template <typename T>
StepReport train_step(DannNetwork<T>& net, SgdMomentum<T>& opt,
                      const TrainBatch<T>& batch, double p, int t,
                      const ScheduleConfig& sched, const LambdaPolicy& policy) {
  const TensorT<T>& images = batch.images;
  if (images.rank() != 4) throw shape_error("train_step: batch images must be [B,4,H,W]");
  const int b = images.dim(0);
  const int half = b / 2;
  if (b < 2 || b % 2 != 0)
    throw data_error("train_step: batch size must be even and >= 2");
  if (static_cast<int>(batch.domains.size()) != b ||
      static_cast<int>(batch.source_labels.size()) != half)
    throw data_error("train_step: batch label/domain lengths do not match images");
  for (int i = 0; i < half; ++i)
    if (batch.domains[static_cast<size_t>(i)] != 0 ||
        batch.domains[static_cast<size_t>(half + i)] != 1)
      throw data_error("train_step: batch must hold B/2 source then B/2 target samples");

  const double lambda = policy.resolve(p);
  const double mu = resolve_lr(p, t, sched);
  net.lambda = lambda;
  net.zero_grad();

  // Forward.
  const TensorT<T> f = net.feature.forward(images);
  TensorT<T> f_src({half, f.dim(1)});
  std::copy(f.data(), f.data() + static_cast<size_t>(half) * f.dim(1), f_src.data());
  const auto [l_y, g_y] = softmax_xent(net.label_head.forward(f_src), batch.source_labels);
  std::vector<int> d_labels(batch.domains.begin(), batch.domains.end());
  const auto grl_out = grl_forward(f, static_cast<T>(lambda));
  const auto [l_d, g_d] = softmax_xent(net.domain_head.forward(grl_out), d_labels);

  // Backward.
  const TensorT<T> df_src = net.label_head.backward(g_y);
  TensorT<T> df = grl_backward(net.domain_head.backward(g_d), static_cast<T>(lambda));
  for (int i = 0; i < df_src.size(); ++i) df[i] += df_src[i];
  net.feature.backward(df);

  // Updates: Eq-form plain SGD plus classical momentum; the domain head's
  // gradient is scaled by lambda.
  auto params = net.parameters();
  if (opt.slots() != params.size()) opt.attach(params);
  for (size_t i = 0; i < params.size(); ++i) {
    const double scale = params[i].role == "domain_classifier" ? lambda : 1.0;
    opt.step(i, params[i], mu, scale);
  }

  StepReport rep;
  rep.label_loss = l_y;
  rep.domain_loss = l_d;
  rep.objective = l_y - lambda * l_d;
  rep.lambda = lambda;
  rep.learning_rate = mu;
  rep.progress = p;
  if (!std::isfinite(rep.label_loss) || !std::isfinite(rep.domain_loss))
    throw numeric_error("train_step: non-finite loss");
  return rep;
}

struct FitConfig {
  int epochs = 30;
  int batch_size = 64;
  std::uint64_t seed = 1;
  double momentum = 0.45;
  ScheduleConfig sched;
  LambdaPolicy lambda = LambdaPolicy::scheduled();
};

// Shuffled half-and-half batches; progress p runs linearly from 0 at the
// first batch to 1 at the last across all epochs.
std::vector<StepReport> fit(DannNetwork<float>& net, const Dataset& source_train,
                            const Dataset& target_train, const FitConfig& cfg);

}  // namespace dann
