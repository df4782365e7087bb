#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dann/tensor.hpp"

namespace dann {

constexpr int kImageChannels = 4;
constexpr int kImageSize = 80;
constexpr int kNumClasses = 3;  // 0=downstairs, 1=upstairs, 2=negative

enum class Domain : int { Source = 0, Target = 1 };

const char* domain_name(Domain d);
const char* class_name(int label);

// One 4-channel image (R,G,B,D), values in [0,1], with an optional class
// label and a domain tag. Target-domain samples handed to training are
// tainted: reading their label throws, which keeps the training path honest
// about unsupervised adaptation.
class Sample {
 public:
  Sample(Tensor image, std::optional<int> label, Domain domain);

  const Tensor& image() const { return image_; }
  Domain domain() const { return domain_; }

  bool has_label() const { return label_.has_value() && !taint_; }
  int label() const;

  void mark_training_taint() { taint_ = true; }
  bool tainted() const { return taint_; }

 private:
  Tensor image_;
  std::optional<int> label_;
  Domain domain_;
  bool taint_ = false;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string manifest_path;  // provenance; empty for in-memory data

  int size() const { return static_cast<int>(samples.size()); }
  bool empty() const { return samples.empty(); }
};

// Resizes [C,H,W] to [C,out_h,out_w] with bilinear interpolation
// (half-pixel centers, edge clamped). Identity when sizes already match.
Tensor bilinear_resize(const Tensor& chw, int out_h, int out_w);

// Packs an RGB image and its depth map into one [4,80,80] tensor: bilinear
// resize per channel, then per-channel min-max normalization to [0,1]
// (a constant channel maps to all zeros).
Tensor pack_rgbd(const Tensor& rgb, const Tensor& depth);

// Seeded shuffle, first ceil(0.8*N) samples to train.
std::pair<Dataset, Dataset> split_source(const Dataset& ds, std::uint64_t seed);

// Seeded shuffle, round(0.4*N) to train; target-domain train samples are
// tainted against label reads.
std::pair<Dataset, Dataset> split_target(const Dataset& ds, std::uint64_t seed);

// Training batch: B/2 source samples first, then B/2 target samples.
template <typename T>
struct TrainBatch {
  TensorT<T> images;                  // [B,4,80,80]
  std::vector<int> source_labels;     // size B/2
  std::vector<std::uint8_t> domains;  // size B, 0=source 1=target
  bool wrapped = false;               // true when the batch padded by wrapping
};
using Batch = TrainBatch<float>;

// Half-and-half batch stream. Each epoch visits every source sample exactly
// once (the final batch may pad by wrapping); target samples recycle through
// an independently reshuffled cycle.
class BatchStream {
 public:
  BatchStream(const Dataset& source_train, const Dataset& target_train,
              int batch_size, std::uint64_t seed);

  int batches_per_epoch() const { return batches_per_epoch_; }
  Batch next();

 private:
  void reshuffle_source();
  void reshuffle_target();

  const Dataset* src_;
  const Dataset* tgt_;
  int batch_size_;
  int batches_per_epoch_;
  Rng rng_;
  std::vector<int> src_order_, tgt_order_;
  int src_pos_ = 0, tgt_pos_ = 0;
};

// Synthetic two-domain benchmark. Classes are geometric: horizontal bands
// with a downward depth ramp (downstairs), bands with an upward ramp
// (upstairs), and unstructured blobs over flat depth (negative). The target
// domain applies a hue rotation, a low-frequency background texture, and
// additive RGB noise, all scaled by `shift`; depth noise runs at shift/4.
struct SynthConfig {
  int per_class = 200;  // per class, per domain
  double shift = 0.6;
};

std::pair<Dataset, Dataset> synth_domain_pair(const SynthConfig& cfg,
                                              std::uint64_t seed);

// Manifest CSV: header `path,label,domain` with `path` naming an RDT file
// holding one [4,80,80] tensor, or `rgb_path,depth_path,label,domain` with a
// [3,H,W] + [1,H,W] pair packed at load. Label is empty for unlabeled rows.
// Paths resolve relative to the manifest's directory.
Dataset load_manifest(const std::filesystem::path& csv_path);

// Writes <dir>/<stem>.csv plus RDT files under <dir>/rdt/. Deterministic:
// identical datasets produce byte-identical files.
void write_manifest_dataset(const Dataset& ds, const std::filesystem::path& dir,
                            const std::string& stem, bool write_labels);

}  // namespace dann
