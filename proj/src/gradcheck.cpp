#include "dann/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "dann/model.hpp"

namespace dann {

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}

// <R, out>: a random linear functional makes the incoming gradient generic.
double weighted_sum(const Tensor64& out, const Tensor64& r) {
  double acc = 0.0;
  for (int i = 0; i < out.size(); ++i) acc += out[i] * r[i];
  return acc;
}

struct Check {
  std::string name;
  double err;
};

std::vector<Check> check_conv(Padding pad, std::uint64_t seed, FaultInjection fault) {
  Rng rng(seed, 0xc07);
  Conv2d<double> conv(4, 5, 3, pad);
  conv.init(rng);
  const Tensor64 x = random_tensor({2, 4, 8, 8}, rng);
  const Tensor64 out0 = conv.forward(x);
  const Tensor64 r = random_tensor(out0.shape(), rng);

  conv.zero_grad();
  conv.forward(x);
  Tensor64 dx = conv.backward(r);
  if (fault == FaultInjection::ConvInputSignFlip)
    for (int i = 0; i < dx.size(); ++i) dx[i] = -dx[i];

  const std::string tag = pad == Padding::Same ? "conv2d_same" : "conv2d_valid";
  auto loss_with_x = [&](const Tensor64& probe) {
    return weighted_sum(conv.forward(probe), r);
  };
  const Tensor64 fd_x = finite_diff_grad(loss_with_x, x);

  Tensor64 w_backup = conv.weights();
  auto loss_with_w = [&](const Tensor64& probe) {
    conv.weights() = probe;
    const double v = weighted_sum(conv.forward(x), r);
    conv.weights() = w_backup;
    return v;
  };
  const Tensor64 fd_w = finite_diff_grad(loss_with_w, w_backup);

  Tensor64 b_backup = conv.bias();
  auto loss_with_b = [&](const Tensor64& probe) {
    conv.bias() = probe;
    const double v = weighted_sum(conv.forward(x), r);
    conv.bias() = b_backup;
    return v;
  };
  const Tensor64 fd_b = finite_diff_grad(loss_with_b, b_backup);

  conv.weights() = w_backup;
  conv.bias() = b_backup;
  conv.forward(x);  // restore cache consistency
  return {{tag + "/input", max_rel_err(fd_x, dx)},
          {tag + "/weight", max_rel_err(fd_w, conv.weight_grad())},
          {tag + "/bias", max_rel_err(fd_b, conv.bias_grad())}};
}

std::vector<Check> check_maxpool(std::uint64_t seed) {
  Rng rng(seed, 0x900);
  // Index-proportional offsets keep every window's values distinct so the
  // finite-difference step cannot flip an argmax.
  Tensor64 x({2, 3, 6, 6});
  for (int i = 0; i < x.size(); ++i)
    x[i] = rng.normal() + 1e-2 * i;
  MaxPool2x2<double> pool;
  const Tensor64 out0 = pool.forward(x);
  Rng rng_r(seed, 0x901);
  const Tensor64 r = random_tensor(out0.shape(), rng_r);
  const Tensor64 dx = pool.backward(r);
  MaxPool2x2<double> probe_pool;
  const Tensor64 fd = finite_diff_grad(
      [&](const Tensor64& probe) { return weighted_sum(probe_pool.forward(probe), r); }, x);
  return {{"maxpool2x2/input", max_rel_err(fd, dx)}};
}

std::vector<Check> check_relu(std::uint64_t seed) {
  Rng rng(seed, 0x7e1);
  Tensor64 x({4, 9});
  for (int i = 0; i < x.size(); ++i) {
    double v = rng.normal();
    if (std::fabs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;  // stay off the kink
    x[i] = v;
  }
  Relu<double> relu;
  const Tensor64 out0 = relu.forward(x);
  const Tensor64 r = random_tensor(out0.shape(), rng);
  const Tensor64 dx = relu.backward(r);
  Relu<double> probe_relu;
  const Tensor64 fd = finite_diff_grad(
      [&](const Tensor64& probe) { return weighted_sum(probe_relu.forward(probe), r); }, x);
  return {{"relu/input", max_rel_err(fd, dx)}};
}

std::vector<Check> check_dense(std::uint64_t seed) {
  Rng rng(seed, 0xde5e);
  Dense<double> fc(10, 7);
  fc.init(rng);
  const Tensor64 x = random_tensor({4, 10}, rng);
  const Tensor64 out0 = fc.forward(x);
  const Tensor64 r = random_tensor(out0.shape(), rng);
  fc.zero_grad();
  fc.forward(x);
  const Tensor64 dx = fc.backward(r);

  const Tensor64 fd_x = finite_diff_grad(
      [&](const Tensor64& probe) { return weighted_sum(fc.forward(probe), r); }, x);
  Tensor64 w_backup = fc.weights();
  const Tensor64 fd_w = finite_diff_grad(
      [&](const Tensor64& probe) {
        fc.weights() = probe;
        const double v = weighted_sum(fc.forward(x), r);
        fc.weights() = w_backup;
        return v;
      },
      w_backup);
  Tensor64 b_backup = fc.bias();
  const Tensor64 fd_b = finite_diff_grad(
      [&](const Tensor64& probe) {
        fc.bias() = probe;
        const double v = weighted_sum(fc.forward(x), r);
        fc.bias() = b_backup;
        return v;
      },
      b_backup);
  return {{"dense/input", max_rel_err(fd_x, dx)},
          {"dense/weight", max_rel_err(fd_w, fc.weight_grad())},
          {"dense/bias", max_rel_err(fd_b, fc.bias_grad())}};
}

std::vector<Check> check_softmax(std::uint64_t seed) {
  Rng rng(seed, 0x50f);
  const Tensor64 logits = random_tensor({5, 3}, rng, 2.0);
  std::vector<int> labels(5);
  for (auto& l : labels) l = static_cast<int>(rng.next_below(3));
  const auto [loss, grad] = softmax_xent(logits, labels);
  (void)loss;
  const Tensor64 fd = finite_diff_grad(
      [&](const Tensor64& probe) { return softmax_xent(probe, labels).first; }, logits);
  return {{"softmax_xent/logits", max_rel_err(fd, grad)}};
}

std::vector<Check> check_grl(std::uint64_t seed) {
  Rng rng(seed, 0x621);
  const Tensor64 g = random_tensor({3, 7}, rng);
  double worst = 0.0;
  for (double lambda : {0.0, 0.5, 1.0}) {
    const Tensor64 back = grl_backward(g, lambda);
    for (int i = 0; i < g.size(); ++i) {
      const double expect = -lambda * g[i];
      if (back[i] != expect) worst = std::max(worst, 1.0);
    }
  }
  return {{"grl/backward_exact", worst}};
}

// Probes dR/dtheta for a handful of coordinates spread over the extractor,
// the label head and the domain head, against finite differences of the
// scalar objective R = L_y - lambda * L_d on a 2-sample mixed batch.
std::vector<Check> check_network_probe(std::uint64_t seed) {
  const double lambda = 0.7;
  Rng rng(seed, 0xdacc);
  DannNetwork<double> net = build_network<double>(rng);
  net.lambda = lambda;

  Tensor64 images({2, 4, 80, 80});
  for (int i = 0; i < images.size(); ++i) images[i] = rng.next_double();
  const std::vector<int> y_src = {static_cast<int>(rng.next_below(3))};
  const std::vector<int> domains = {0, 1};

  auto objective = [&]() {
    const Tensor64 f = net.feature.forward(images);
    Tensor64 f_src({1, f.dim(1)});
    std::copy(f.data(), f.data() + f.dim(1), f_src.data());
    const double l_y = softmax_xent(net.label_head.forward(f_src), y_src).first;
    const double l_d =
        softmax_xent(net.domain_head.forward(grl_forward(f, lambda)), domains).first;
    return l_y - lambda * l_d;
  };

  // Analytic gradients via one backward sweep, mirroring a training step.
  net.zero_grad();
  {
    const Tensor64 f = net.feature.forward(images);
    Tensor64 f_src({1, f.dim(1)});
    std::copy(f.data(), f.data() + f.dim(1), f_src.data());
    const auto [l_y, g_y] = softmax_xent(net.label_head.forward(f_src), y_src);
    (void)l_y;
    const auto [l_d, g_d] =
        softmax_xent(net.domain_head.forward(grl_forward(f, lambda)), domains);
    (void)l_d;
    const Tensor64 df_src = net.label_head.backward(g_y);
    Tensor64 df = grl_backward(net.domain_head.backward(g_d), lambda);
    for (int i = 0; i < df_src.size(); ++i) df[i] += df_src[i];
    net.feature.backward(df);
  }

  auto params = net.parameters();
  struct Probe {
    const char* param;
    int coord;
  };
  const Probe probes[] = {
      {"feature.conv1.weight", 0},   {"feature.conv1.weight", 1000},
      {"feature.conv1.bias", 3},     {"feature.conv3.weight", 77},
      {"feature.conv5.weight", 505}, {"feature.conv5.bias", 17},
      {"label.fc1.weight", 123},     {"label.fc3.bias", 1},
      {"domain.fc1.weight", 321},    {"domain.fc2.bias", 0},
  };

  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& probe : probes) {
    for (auto& p : params) {
      if (p.name != probe.param) continue;
      const int c = probe.coord % p.value->size();
      const double orig = (*p.value)[c];
      (*p.value)[c] = orig + h;
      const double fp = objective();
      (*p.value)[c] = orig - h;
      const double fm = objective();
      (*p.value)[c] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      // Stored domain-head grads hold dL_d/dtheta_d; R sees them through
      // the -lambda weight that the update step applies.
      const double analytic = p.role == "domain_classifier"
                                  ? -lambda * (*p.grad)[c]
                                  : (*p.grad)[c];
      const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-8});
      worst = std::max(worst, std::fabs(fd - analytic) / denom);
    }
  }
  return {{"network/objective_probe", worst}};
}

}  // namespace

GradCheckReport run_gradient_checks(int num_seeds, double tolerance,
                                    FaultInjection fault) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  std::vector<Check> worst;

  auto merge = [&](const std::vector<Check>& checks) {
    for (const auto& c : checks) {
      bool found = false;
      for (auto& w : worst) {
        if (w.name == c.name) {
          w.err = std::max(w.err, c.err);
          found = true;
        }
      }
      if (!found) worst.push_back(c);
    }
  };

  for (int s = 0; s < num_seeds; ++s) {
    const std::uint64_t seed = 1000u + static_cast<std::uint64_t>(s);
    merge(check_conv(Padding::Same, seed, fault));
    merge(check_conv(Padding::Valid, seed, fault));
    merge(check_maxpool(seed));
    merge(check_relu(seed));
    merge(check_dense(seed));
    merge(check_softmax(seed));
    merge(check_grl(seed));
  }
  merge(check_network_probe(42));

  report.all_pass = true;
  for (const auto& w : worst) {
    GradCheckItem item;
    item.name = w.name;
    item.worst_rel_err = w.err;
    item.tolerance = w.name == "softmax_xent/logits" ? 1e-6 : tolerance;
    item.pass = w.err < item.tolerance;
    report.all_pass = report.all_pass && item.pass;
    report.items.push_back(std::move(item));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace dann
