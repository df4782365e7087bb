#include "dann/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace dann {

ConfusionMatrix::ConfusionMatrix(int k) : k_(k) {
  if (k < 1) throw config_error("confusion matrix needs k >= 1 classes");
  counts_.assign(static_cast<size_t>(k) * k, 0);
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<int>>& rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int p = 0; p < cm.k_; ++p) {
    if (static_cast<int>(rows[static_cast<size_t>(p)].size()) != cm.k_)
      throw shape_error("confusion matrix rows must be square");
    for (int t = 0; t < cm.k_; ++t) {
      const int v = rows[static_cast<size_t>(p)][static_cast<size_t>(t)];
      if (v < 0) throw data_error("confusion matrix counts must be nonnegative");
      cm.counts_[static_cast<size_t>(p * cm.k_ + t)] = v;
    }
  }
  return cm;
}

void ConfusionMatrix::add(int predicted, int truth) {
  if (predicted < 0 || predicted >= k_ || truth < 0 || truth >= k_)
    throw label_error("confusion matrix index out of range");
  ++counts_[static_cast<size_t>(predicted * k_ + truth)];
}

int ConfusionMatrix::at(int predicted, int truth) const {
  return counts_[static_cast<size_t>(predicted * k_ + truth)];
}

int ConfusionMatrix::total() const {
  int s = 0;
  for (int v : counts_) s += v;
  return s;
}

int ConfusionMatrix::trace() const {
  int s = 0;
  for (int i = 0; i < k_; ++i) s += at(i, i);
  return s;
}

int ConfusionMatrix::row_sum(int predicted) const {
  int s = 0;
  for (int t = 0; t < k_; ++t) s += at(predicted, t);
  return s;
}

std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(static_cast<size_t>(cm.classes()));
  for (int i = 0; i < cm.classes(); ++i) {
    const int rs = cm.row_sum(i);
    if (rs > 0) out[static_cast<size_t>(i)] = static_cast<double>(cm.at(i, i)) / rs;
  }
  return out;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const int tot = cm.total();
  if (tot == 0) throw data_error("overall_accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / tot;
}

int argmax_row(const Tensor& logits, int row) {
  const int k = logits.dim(1);
  int best = 0;
  float best_v = logits.at(row, 0);
  for (int j = 1; j < k; ++j) {
    if (logits.at(row, j) > best_v) {
      best_v = logits.at(row, j);
      best = j;
    }
  }
  return best;
}

namespace {

constexpr int kEvalChunk = 64;

// Copies samples [from, to) into an [n,4,80,80] batch tensor.
Tensor stack_images(const Dataset& ds, int from, int to) {
  const int n = to - from;
  Tensor images({n, kImageChannels, kImageSize, kImageSize});
  const size_t len = static_cast<size_t>(kImageChannels) * kImageSize * kImageSize;
  for (int i = 0; i < n; ++i) {
    const Tensor& img = ds.samples[static_cast<size_t>(from + i)].image();
    std::copy(img.data(), img.data() + len, images.data() + static_cast<size_t>(i) * len);
  }
  return images;
}

}  // namespace

ConfusionMatrix evaluate(DannNetwork<float>& net, const Dataset& test) {
  if (test.empty()) throw data_error("evaluate: empty test set");
  ConfusionMatrix cm(kNumClasses);
  for (int from = 0; from < test.size(); from += kEvalChunk) {
    const int to = std::min(test.size(), from + kEvalChunk);
    const Tensor logits = net.label_logits(net.features(stack_images(test, from, to)));
    for (int i = 0; i < to - from; ++i)
      cm.add(argmax_row(logits, i), test.samples[static_cast<size_t>(from + i)].label());
  }
  return cm;
}

Tensor extract_penultimate(DannNetwork<float>& net, const Dataset& samples) {
  if (samples.empty()) throw data_error("extract_penultimate: empty dataset");
  Tensor out({samples.size(), 100});
  for (int from = 0; from < samples.size(); from += kEvalChunk) {
    const int to = std::min(samples.size(), from + kEvalChunk);
    net.label_logits(net.features(stack_images(samples, from, to)));
    const Tensor& hidden = net.label_head.last_hidden();
    std::copy(hidden.data(), hidden.data() + hidden.size(),
              out.data() + static_cast<size_t>(from) * 100);
  }
  return out;
}

double knn_cross_domain_mixing(const std::vector<ProjectedPoint>& points, int k) {
  const int n = static_cast<int>(points.size());
  if (n < k + 1) throw data_error("knn mixing needs more points than neighbors");
  double acc = 0.0;
  std::vector<std::pair<double, int>> dist(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double dx = points[static_cast<size_t>(i)].x - points[static_cast<size_t>(j)].x;
      const double dy = points[static_cast<size_t>(i)].y - points[static_cast<size_t>(j)].y;
      dist[static_cast<size_t>(j)] = {dx * dx + dy * dy, j};
    }
    dist[static_cast<size_t>(i)].first = std::numeric_limits<double>::infinity();
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    int other = 0;
    for (int j = 0; j < k; ++j)
      if (points[static_cast<size_t>(dist[static_cast<size_t>(j)].second)].domain !=
          points[static_cast<size_t>(i)].domain)
        ++other;
    acc += static_cast<double>(other) / k;
  }
  return acc / n;
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  return os;
}

std::string class_header(int k) {
  std::string s = "prediction";
  for (int i = 0; i < k; ++i) s += std::string(",") + class_name(i);
  return s;
}

}  // namespace

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << class_header(cm.classes()) << "\n";
  for (int p = 0; p < cm.classes(); ++p) {
    os << class_name(p);
    for (int t = 0; t < cm.classes(); ++t) os << "," << cm.at(p, t);
    os << "\n";
  }
  if (!os) throw io_error("write failed for " + path.string());
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw data_error("empty confusion csv " + path.string());
  std::vector<std::vector<int>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');  // class name
    while (std::getline(ss, field, ',')) row.push_back(std::stoi(field));
    rows.push_back(std::move(row));
  }
  return ConfusionMatrix::from_rows(rows);
}

void write_accuracy_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "class,accuracy_percent\n";
  const auto pca = per_class_accuracy(cm);
  char buf[32];
  for (int i = 0; i < cm.classes(); ++i) {
    os << class_name(i) << ",";
    if (pca[static_cast<size_t>(i)]) {
      std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *pca[static_cast<size_t>(i)]);
      os << buf;
    }
    os << "\n";
  }
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * overall_accuracy(cm));
  os << "overall," << buf << "\n";
  if (!os) throw io_error("write failed for " + path.string());
}

void write_points_csv(const std::vector<ProjectedPoint>& points,
                      const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "x,y,domain,label\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%s,%d", p.x, p.y,
                  p.domain == 0 ? "source" : "target", p.label);
    os << buf << "\n";
  }
  if (!os) throw io_error("write failed for " + path.string());
}

std::vector<ProjectedPoint> read_points_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw data_error("empty points csv " + path.string());
  std::vector<ProjectedPoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string x, y, dom, lab;
    std::getline(ss, x, ',');
    std::getline(ss, y, ',');
    std::getline(ss, dom, ',');
    std::getline(ss, lab, ',');
    out.push_back({std::stod(x), std::stod(y), dom == "source" ? 0 : 1, std::stoi(lab)});
  }
  return out;
}

void export_report(const ConfusionMatrix& cm, const std::vector<ProjectedPoint>& points,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_confusion_csv(cm, dir / "confusion.csv");
  write_accuracy_csv(cm, dir / "accuracy.csv");
  write_points_csv(points, dir / "points.csv");
}

}  // namespace dann
