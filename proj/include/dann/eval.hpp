#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dann/data.hpp"
#include "dann/model.hpp"

namespace dann {

// Integer count matrix, rows = predicted class, columns = ground truth.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k);
  static ConfusionMatrix from_rows(const std::vector<std::vector<int>>& rows);

  void add(int predicted, int truth);
  int at(int predicted, int truth) const;
  int classes() const { return k_; }
  int total() const;
  int trace() const;
  int row_sum(int predicted) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<int> counts_;
};

// diag[i] / rowsum[i]; absent when row i is empty.
std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm);

// trace / total (micro accuracy).
double overall_accuracy(const ConfusionMatrix& cm);

// Argmax with ties broken toward the lowest class index.
int argmax_row(const Tensor& logits, int row);

// Runs the label predictor over a labeled test set.
ConfusionMatrix evaluate(DannNetwork<float>& net, const Dataset& test);

// Activations of the label predictor's last hidden layer, [N,100].
Tensor extract_penultimate(DannNetwork<float>& net, const Dataset& samples);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  int domain = 0;
  int label = -1;
};

struct TsneResult {
  std::vector<ProjectedPoint> points;
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

// Exact t-SNE to 2-D: per-point bandwidth by binary search against the
// perplexity target (tolerance 1e-5, <= 50 iterations), symmetrized P,
// 1000 gradient-descent iterations at learning rate 200 with momentum 0.5
// switching to 0.8 at iteration 250, and x4 early exaggeration for the first
// 100 iterations. Deterministic per seed; the embedding stays centered.
TsneResult tsne_project(const Tensor& features, const std::vector<int>& domains,
                        const std::vector<int>& labels, double perplexity,
                        std::uint64_t seed);

// Mean fraction of each point's k nearest neighbors that belong to the other
// domain; higher means better cross-domain blending.
double knn_cross_domain_mixing(const std::vector<ProjectedPoint>& points, int k = 10);

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);
void write_accuracy_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
void write_points_csv(const std::vector<ProjectedPoint>& points,
                      const std::filesystem::path& path);
std::vector<ProjectedPoint> read_points_csv(const std::filesystem::path& path);

// Writes confusion.csv, accuracy.csv and points.csv under dir.
void export_report(const ConfusionMatrix& cm,
                   const std::vector<ProjectedPoint>& points,
                   const std::filesystem::path& dir);

}  // namespace dann
