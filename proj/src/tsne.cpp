#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dann/eval.hpp"

namespace dann {

namespace {

constexpr double kPMin = 1e-12;

// Pairwise squared Euclidean distances of the rows of features, in double.
std::vector<double> squared_distances(const Tensor& features) {
  const int n = features.dim(0), d = features.dim(1);
  std::vector<double> rows(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      rows[static_cast<size_t>(i) * d + j] = features.at(i, j);
  std::vector<double> d2(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double acc = 0.0;
      const double* a = rows.data() + static_cast<size_t>(i) * d;
      const double* b = rows.data() + static_cast<size_t>(j) * d;
      for (int c = 0; c < d; ++c) {
        const double diff = a[c] - b[c];
        acc += diff * diff;
      }
      d2[static_cast<size_t>(i) * n + j] = acc;
      d2[static_cast<size_t>(j) * n + i] = acc;
    }
  }
  return d2;
}

// Conditional P_{j|i} via binary search on the precision beta_i so the row
// entropy matches log(perplexity) within 1e-5, at most 50 iterations.
void conditional_p(const std::vector<double>& d2, int n, double perplexity,
                   std::vector<double>& p) {
  const double target_h = std::log(perplexity);
  for (int i = 0; i < n; ++i) {
    double beta = 1.0;
    double beta_lo = -std::numeric_limits<double>::max();
    double beta_hi = std::numeric_limits<double>::max();
    double* row = p.data() + static_cast<size_t>(i) * n;
    for (int iter = 0; iter < 50; ++iter) {
      double sum = 0.0, hsum = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        const double v = std::exp(-beta * d2[static_cast<size_t>(i) * n + j]);
        row[j] = v;
        sum += v;
        hsum += beta * d2[static_cast<size_t>(i) * n + j] * v;
      }
      const double h = std::log(sum) + hsum / sum;
      const double diff = h - target_h;
      if (std::fabs(diff) < 1e-5) break;
      if (diff > 0) {
        beta_lo = beta;
        beta = beta_hi == std::numeric_limits<double>::max() ? beta * 2.0
                                                             : (beta + beta_hi) / 2.0;
      } else {
        beta_hi = beta;
        beta = beta_lo == -std::numeric_limits<double>::max() ? beta / 2.0
                                                              : (beta + beta_lo) / 2.0;
      }
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += row[j];
    if (!(sum > 0.0) || !std::isfinite(sum))
      throw numeric_error("tsne: degenerate neighborhood for point " + std::to_string(i));
    for (int j = 0; j < n; ++j) row[j] /= sum;
  }
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q_unnorm,
                     double z, int n) {
  double kl = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double pij = std::max(p[static_cast<size_t>(i) * n + j], kPMin);
      const double qij = std::max(q_unnorm[static_cast<size_t>(i) * n + j] / z, kPMin);
      kl += pij * std::log(pij / qij);
    }
  }
  return kl;
}

}  // namespace

TsneResult tsne_project(const Tensor& features, const std::vector<int>& domains,
                        const std::vector<int>& labels, double perplexity,
                        std::uint64_t seed) {
  if (features.rank() != 2)
    throw shape_error("tsne: features must be [N,D], got " + shape_str(features.shape()));
  const int n = features.dim(0);
  if (n < 5) throw data_error("tsne: need at least 5 points, got " + std::to_string(n));
  if (static_cast<int>(domains.size()) != n || static_cast<int>(labels.size()) != n)
    throw shape_error("tsne: domains/labels must have one entry per feature row");
  if (!(perplexity > 0.0)) throw config_error("tsne: perplexity must be positive");
  const double u = std::min(perplexity, (n - 1) / 3.0);

  const std::vector<double> d2 = squared_distances(features);
  double max_d2 = 0.0;
  for (double v : d2) max_d2 = std::max(max_d2, v);
  if (max_d2 <= 0.0)
    throw numeric_error("tsne: all feature vectors coincide; nothing to embed");

  // Symmetrized joint P.
  std::vector<double> p(static_cast<size_t>(n) * n, 0.0);
  conditional_p(d2, n, u, p);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = (p[static_cast<size_t>(i) * n + j] +
                        p[static_cast<size_t>(j) * n + i]) /
                       (2.0 * n);
      p[static_cast<size_t>(i) * n + j] = v;
      p[static_cast<size_t>(j) * n + i] = v;
    }
    p[static_cast<size_t>(i) * n + i] = 0.0;
  }

  // Small random start, centered.
  Rng rng(seed, 0x75e3);
  std::vector<double> y(static_cast<size_t>(n) * 2);
  for (auto& v : y) v = rng.normal() * 1e-4;
  auto recenter = [&] {
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
      mx += y[static_cast<size_t>(i) * 2];
      my += y[static_cast<size_t>(i) * 2 + 1];
    }
    mx /= n;
    my /= n;
    for (int i = 0; i < n; ++i) {
      y[static_cast<size_t>(i) * 2] -= mx;
      y[static_cast<size_t>(i) * 2 + 1] -= my;
    }
  };
  recenter();

  std::vector<double> q(static_cast<size_t>(n) * n, 0.0);
  auto compute_q = [&]() -> double {
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double dx = y[static_cast<size_t>(i) * 2] - y[static_cast<size_t>(j) * 2];
        const double dy = y[static_cast<size_t>(i) * 2 + 1] - y[static_cast<size_t>(j) * 2 + 1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        q[static_cast<size_t>(i) * n + j] = v;
        q[static_cast<size_t>(j) * n + i] = v;
        z += 2.0 * v;
      }
      q[static_cast<size_t>(i) * n + i] = 0.0;
    }
    return z;
  };

  const double initial_kl = kl_divergence(p, q, compute_q(), n);

  const int iters = 1000;
  const int exaggeration_end = 100;
  const int momentum_switch = 250;
  const double lr = 200.0;
  std::vector<double> vel(static_cast<size_t>(n) * 2, 0.0);
  std::vector<double> grad(static_cast<size_t>(n) * 2);
  for (int iter = 0; iter < iters; ++iter) {
    const double exag = iter < exaggeration_end ? 4.0 : 1.0;
    const double momentum = iter < momentum_switch ? 0.5 : 0.8;
    const double z = compute_q();
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const double qij = q[static_cast<size_t>(i) * n + j];
        const double mult =
            4.0 * (exag * p[static_cast<size_t>(i) * n + j] - qij / z) * qij;
        grad[static_cast<size_t>(i) * 2] +=
            mult * (y[static_cast<size_t>(i) * 2] - y[static_cast<size_t>(j) * 2]);
        grad[static_cast<size_t>(i) * 2 + 1] +=
            mult * (y[static_cast<size_t>(i) * 2 + 1] - y[static_cast<size_t>(j) * 2 + 1]);
      }
    }
    for (size_t i = 0; i < vel.size(); ++i) {
      vel[i] = momentum * vel[i] - lr * grad[i];
      y[i] += vel[i];
    }
    recenter();
  }

  const double final_kl = kl_divergence(p, q, compute_q(), n);

  TsneResult result;
  result.initial_kl = initial_kl;
  result.final_kl = final_kl;
  result.points.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& pt = result.points[static_cast<size_t>(i)];
    pt.x = y[static_cast<size_t>(i) * 2];
    pt.y = y[static_cast<size_t>(i) * 2 + 1];
    pt.domain = domains[static_cast<size_t>(i)];
    pt.label = labels[static_cast<size_t>(i)];
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y))
      throw numeric_error("tsne: non-finite embedding coordinate");
  }
  return result;
}

}  // namespace dann
