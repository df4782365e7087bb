#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dann/layers.hpp"
#include "dann/runtime.hpp"

using namespace dann;

namespace {

Tensor64 randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}

double sum_all(const Tensor64& t) {
  double s = 0.0;
  for (int i = 0; i < t.size(); ++i) s += t[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d on a field of ones") {
  SUBCASE("valid padding collapses to the kernel sum") {
    Conv2d<double> conv(1, 1, 3, Padding::Valid);
    conv.weights().fill(1.0);
    conv.bias().fill(0.0);
    const Tensor64 x({1, 1, 3, 3}, 1.0);
    const Tensor64 y = conv.forward(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == doctest::Approx(9.0));
  }

  SUBCASE("same padding loses mass at the border") {
    Conv2d<double> conv(1, 1, 3, Padding::Same);
    conv.weights().fill(1.0);
    conv.bias().fill(0.0);
    const Tensor64 x({1, 1, 3, 3}, 1.0);
    const Tensor64 y = conv.forward(x);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.0));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 0, 2) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 2, 0) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 2, 2) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(6.0));
  }
}

TEST_CASE("conv2d gradients match the finite-difference oracle (loss = sum)") {
  for (const Padding pad : {Padding::Same, Padding::Valid}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      CAPTURE(seed);
      Rng rng(seed);
      Conv2d<double> conv(4, 5, 3, pad);
      conv.init(rng);
      const Tensor64 x = randn({2, 4, 8, 8}, rng);

      conv.zero_grad();
      const Tensor64 y = conv.forward(x);
      const Tensor64 ones(y.shape(), 1.0);
      const Tensor64 dx = conv.backward(ones);

      const Tensor64 fd_x = finite_diff_grad(
          [&](const Tensor64& probe) { return sum_all(conv.forward(probe)); }, x);
      CHECK(max_rel_err(fd_x, dx) < 1e-4);

      Tensor64 w0 = conv.weights();
      const Tensor64 fd_w = finite_diff_grad(
          [&](const Tensor64& probe) {
            conv.weights() = probe;
            const double v = sum_all(conv.forward(x));
            conv.weights() = w0;
            return v;
          },
          w0);
      CHECK(max_rel_err(fd_w, conv.weight_grad()) < 1e-4);

      Tensor64 b0 = conv.bias();
      const Tensor64 fd_b = finite_diff_grad(
          [&](const Tensor64& probe) {
            conv.bias() = probe;
            const double v = sum_all(conv.forward(x));
            conv.bias() = b0;
            return v;
          },
          b0);
      CHECK(max_rel_err(fd_b, conv.bias_grad()) < 1e-4);
    }
  }
}

TEST_CASE("conv2d backward edge behavior") {
  SUBCASE("zero grad_out yields zero gradients") {
    Rng rng(11);
    Conv2d<double> conv(2, 3, 3, Padding::Same);
    conv.init(rng);
    const Tensor64 x = randn({1, 2, 5, 5}, rng);
    conv.zero_grad();
    const Tensor64 y = conv.forward(x);
    const Tensor64 dx = conv.backward(Tensor64(y.shape(), 0.0));
    for (int i = 0; i < dx.size(); ++i) CHECK(dx[i] == 0.0);
    for (int i = 0; i < conv.weight_grad().size(); ++i) CHECK(conv.weight_grad()[i] == 0.0);
  }

  SUBCASE("1x1 scalar conv is the scalar chain rule") {
    Conv2d<double> conv(1, 1, 1, Padding::Valid);
    conv.weights()[0] = 2.5;
    conv.bias()[0] = 0.25;
    Tensor64 x({1, 1, 1, 1}, 3.0);
    conv.zero_grad();
    conv.forward(x);
    const Tensor64 dx = conv.backward(Tensor64({1, 1, 1, 1}, 1.0));
    CHECK(dx[0] == doctest::Approx(2.5));
    CHECK(conv.weight_grad()[0] == doctest::Approx(3.0));
    CHECK(conv.bias_grad()[0] == doctest::Approx(1.0));
  }

  SUBCASE("backward before forward is a state error") {
    Conv2d<double> conv(1, 1, 3, Padding::Same);
    CHECK_THROWS_AS(conv.backward(Tensor64({1, 1, 3, 3}, 0.0)), Error);
  }

  SUBCASE("channel mismatch is a shape error") {
    Conv2d<double> conv(3, 4, 3, Padding::Same);
    CHECK_THROWS_AS(conv.forward(Tensor64({1, 2, 5, 5}, 0.0)), Error);
  }
}

TEST_CASE("conv2d shape arithmetic") {
  Rng rng(2);
  for (const int k : {1, 3, 5, 7}) {
    Conv2d<double> same(2, 2, k, Padding::Same);
    same.init(rng);
    CHECK(same.forward(Tensor64({1, 2, 9, 11}, 0.5)).shape() == Shape{1, 2, 9, 11});
    Conv2d<double> valid(2, 2, k, Padding::Valid);
    valid.init(rng);
    CHECK(valid.forward(Tensor64({1, 2, 9, 11}, 0.5)).shape() ==
          Shape{1, 2, 9 - k + 1, 11 - k + 1});
  }
  CHECK_THROWS_AS(Conv2d<double>(1, 1, 4, Padding::Same), Error);
}

TEST_CASE("maxpool picks window maxima and routes gradient to them") {
  Tensor64 x({1, 1, 2, 2});
  x[0] = 1.0; x[1] = 2.0; x[2] = 3.0; x[3] = 4.0;
  MaxPool2x2<double> pool;
  const Tensor64 y = pool.forward(x);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 4.0);
  CHECK(pool.argmax()[0] == 3);  // position (1,1)

  const Tensor64 dx = pool.backward(Tensor64({1, 1, 1, 1}, 5.0));
  CHECK(dx[3] == 5.0);
  CHECK(dx[0] == 0.0);

  SUBCASE("odd trailing row and column are dropped") {
    MaxPool2x2<double> p5;
    CHECK(p5.forward(Tensor64({1, 1, 5, 5}, 1.0)).shape() == Shape{1, 1, 2, 2});
  }

  SUBCASE("spatial dims below 2 are rejected") {
    MaxPool2x2<double> p;
    CHECK_THROWS_AS(p.forward(Tensor64({1, 1, 1, 4}, 0.0)), Error);
  }
}

TEST_CASE("maxpool gradient properties") {
  Rng rng(5);
  Tensor64 x({2, 3, 6, 6});
  for (int i = 0; i < x.size(); ++i) x[i] = rng.normal() + 0.01 * i;  // unique values
  MaxPool2x2<double> pool;
  const Tensor64 y = pool.forward(x);
  Rng rng2(6);
  const Tensor64 g = randn(y.shape(), rng2);
  const Tensor64 dx = pool.backward(g);

  SUBCASE("gradient mass is conserved") {
    CHECK(sum_all(dx) == doctest::Approx(sum_all(g)).epsilon(1e-12));
  }

  SUBCASE("matches finite differences on distinct-valued input") {
    MaxPool2x2<double> probe;
    const Tensor64 fd = finite_diff_grad(
        [&](const Tensor64& t) {
          const Tensor64 out = probe.forward(t);
          double s = 0.0;
          for (int i = 0; i < out.size(); ++i) s += out[i] * g[i];
          return s;
        },
        x);
    CHECK(max_rel_err(fd, dx) < 1e-4);
  }
}

TEST_CASE("relu forward, chosen subgradient and oracle agreement") {
  Relu<double> relu;
  Tensor64 x({3});
  x[0] = -1.0; x[1] = 0.0; x[2] = 2.0;
  const Tensor64 y = relu.forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
  const Tensor64 dx = relu.backward(Tensor64({3}, 1.0));
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == 0.0);  // subgradient 0 at exactly 0
  CHECK(dx[2] == 1.0);

  Rng rng(8);
  Tensor64 xr({4, 7});
  for (int i = 0; i < xr.size(); ++i) {
    double v = rng.normal();
    if (std::fabs(v) < 1e-3) v += v < 0 ? -1e-3 : 1e-3;
    xr[i] = v;
  }
  Relu<double> r2;
  const Tensor64 out = r2.forward(xr);
  const Tensor64 g = randn(out.shape(), rng);
  const Tensor64 dxr = r2.backward(g);
  Relu<double> probe;
  const Tensor64 fd = finite_diff_grad(
      [&](const Tensor64& t) {
        const Tensor64 o = probe.forward(t);
        double s = 0.0;
        for (int i = 0; i < o.size(); ++i) s += o[i] * g[i];
        return s;
      },
      xr);
  CHECK(max_rel_err(fd, dxr) < 1e-4);
}

TEST_CASE("dense layer basics and oracle agreement") {
  SUBCASE("identity weights pass the input through") {
    Dense<double> fc(2, 2);
    fc.weights().fill(0.0);
    fc.weights().at(0, 0) = 1.0;
    fc.weights().at(1, 1) = 1.0;
    fc.bias().fill(0.0);
    Tensor64 x({1, 2});
    x[0] = 1.0; x[1] = 2.0;
    const Tensor64 y = fc.forward(x);
    CHECK(y[0] == doctest::Approx(1.0));
    CHECK(y[1] == doctest::Approx(2.0));
  }

  SUBCASE("zero weights expose the bias") {
    Dense<double> fc(3, 1);
    fc.weights().fill(0.0);
    fc.bias()[0] = 3.0;
    Tensor64 x({1, 3});
    x[0] = 4.0; x[1] = -1.0; x[2] = 0.5;
    CHECK(fc.forward(x)[0] == doctest::Approx(3.0));
  }

  SUBCASE("dim mismatch is a shape error") {
    Dense<double> fc(3, 2);
    CHECK_THROWS_AS(fc.forward(Tensor64({1, 4}, 0.0)), Error);
  }

  SUBCASE("gradients match the oracle on 4x10 -> 7") {
    for (std::uint64_t seed = 21; seed <= 25; ++seed) {
      CAPTURE(seed);
      Rng rng(seed);
      Dense<double> fc(10, 7);
      fc.init(rng);
      const Tensor64 x = randn({4, 10}, rng);
      fc.zero_grad();
      const Tensor64 y = fc.forward(x);
      const Tensor64 r = randn(y.shape(), rng);
      const Tensor64 dx = fc.backward(r);

      auto weighted = [&](const Tensor64& out) {
        double s = 0.0;
        for (int i = 0; i < out.size(); ++i) s += out[i] * r[i];
        return s;
      };
      const Tensor64 fd_x = finite_diff_grad(
          [&](const Tensor64& probe) { return weighted(fc.forward(probe)); }, x);
      CHECK(max_rel_err(fd_x, dx) < 1e-4);

      Tensor64 w0 = fc.weights();
      const Tensor64 fd_w = finite_diff_grad(
          [&](const Tensor64& probe) {
            fc.weights() = probe;
            const double v = weighted(fc.forward(x));
            fc.weights() = w0;
            return v;
          },
          w0);
      CHECK(max_rel_err(fd_w, fc.weight_grad()) < 1e-4);

      Tensor64 b0 = fc.bias();
      const Tensor64 fd_b = finite_diff_grad(
          [&](const Tensor64& probe) {
            fc.bias() = probe;
            const double v = weighted(fc.forward(x));
            fc.bias() = b0;
            return v;
          },
          b0);
      CHECK(max_rel_err(fd_b, fc.bias_grad()) < 1e-4);
    }
  }
}

TEST_CASE("softmax cross-entropy values, stability and gradient") {
  SUBCASE("uniform logits give ln 3") {
    const Tensor64 logits({1, 3}, 0.0);
    const auto [loss, grad] = softmax_xent(logits, {1});
    CHECK(loss == doctest::Approx(1.0986122886681097).epsilon(1e-12));
  }

  SUBCASE("huge correct logit gives ~0 loss without overflow") {
    Tensor64 logits({1, 3}, 0.0);
    logits[0] = 1000.0;
    const auto [loss, grad] = softmax_xent(logits, {0});
    CHECK(std::isfinite(loss));
    CHECK(loss < 1e-6);
  }

  SUBCASE("out-of-range label is rejected") {
    const Tensor64 logits({1, 3}, 0.0);
    CHECK_THROWS_AS(softmax_xent(logits, {3}), Error);
    CHECK_THROWS_AS(softmax_xent(logits, {-1}), Error);
  }

  SUBCASE("gradient matches the oracle at 1e-6") {
    Rng rng(31);
    const Tensor64 logits = randn({5, 3}, rng, 2.0);
    std::vector<int> labels(5);
    for (auto& l : labels) l = static_cast<int>(rng.next_below(3));
    const auto [loss, grad] = softmax_xent(logits, labels);
    const Tensor64 fd = finite_diff_grad(
        [&](const Tensor64& probe) { return softmax_xent(probe, labels).first; },
        logits);
    for (int i = 0; i < grad.size(); ++i) CHECK(std::fabs(fd[i] - grad[i]) < 1e-6);
  }

  SUBCASE("loss is nonnegative and gradient rows sum to zero") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor64 logits = randn({4, 3}, rng, 3.0);
      std::vector<int> labels(4);
      for (auto& l : labels) l = static_cast<int>(rng.next_below(3));
      const auto [loss, grad] = softmax_xent(logits, labels);
      CHECK(loss >= 0.0);
      for (int r = 0; r < 4; ++r) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += grad.at(r, j);
        CHECK(std::fabs(s) < 1e-6);
      }
    }
  }
}

TEST_CASE("gradient reversal is exact") {
  SUBCASE("forward is bit-identical") {
    Tensor fx({2});
    fx[0] = 3.5f;
    fx[1] = -2.0f;
    const Tensor fy = grl_forward(fx, 0.7f);
    CHECK(std::memcmp(fx.data(), fy.data(), sizeof(float) * 2) == 0);
  }

  SUBCASE("backward is exactly -lambda * g") {
    Tensor64 g({2});
    g[0] = 1.0;
    g[1] = -2.0;
    const Tensor64 dx = grl_backward(g, 0.5);
    CHECK(dx[0] == -0.5);
    CHECK(dx[1] == 1.0);
  }

  SUBCASE("lambda 0 kills the gradient") {
    Rng rng(4);
    const Tensor64 g = randn({3, 5}, rng);
    const Tensor64 dx = grl_backward(g, 0.0);
    for (int i = 0; i < dx.size(); ++i) CHECK(dx[i] == 0.0);
  }

  SUBCASE("double application is the identity, bit-exactly") {
    Rng rng(14);
    Tensor x({64});
    for (int i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());
    const Tensor y = grl_forward(grl_forward(x, 0.3f), 0.3f);
    CHECK(std::memcmp(x.data(), y.data(), sizeof(float) * x.size()) == 0);
  }

  SUBCASE("backward is linear in its input (power-of-two scale)") {
    Rng rng(15);
    const Tensor64 g = randn({40}, rng);
    const double a = 4.0;  // exact scaling
    Tensor64 ag(g.shape());
    for (int i = 0; i < g.size(); ++i) ag[i] = a * g[i];
    const Tensor64 left = grl_backward(ag, 0.37);
    const Tensor64 right = grl_backward(g, 0.37);
    for (int i = 0; i < g.size(); ++i) CHECK(left[i] == a * right[i]);
  }

  SUBCASE("negative lambda is rejected") {
    CHECK_THROWS_AS(grl_backward(Tensor64({1}, 1.0), -0.1), Error);
  }
}

TEST_CASE("parallel batches reproduce single-thread results bit-exactly") {
  Rng rng(99);
  Conv2d<float> conv(3, 6, 3, Padding::Same);
  conv.init(rng);
  Tensor x({8, 3, 10, 10});
  for (int i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());
  Tensor g({8, 6, 10, 10});
  for (int i = 0; i < g.size(); ++i) g[i] = static_cast<float>(rng.normal());

  set_max_threads(1);
  conv.zero_grad();
  const Tensor y1 = conv.forward(x);
  const Tensor dx1 = conv.backward(g);
  const Tensor wg1 = conv.weight_grad();

  set_max_threads(2);
  conv.zero_grad();
  const Tensor y2 = conv.forward(x);
  const Tensor dx2 = conv.backward(g);
  const Tensor wg2 = conv.weight_grad();
  set_max_threads(1);

  CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * y1.size()) == 0);
  CHECK(std::memcmp(dx1.data(), dx2.data(), sizeof(float) * dx1.size()) == 0);
  CHECK(std::memcmp(wg1.data(), wg2.data(), sizeof(float) * wg1.size()) == 0);
}
