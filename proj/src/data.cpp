#include "dann/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dann/rdt_io.hpp"

namespace dann {

const char* domain_name(Domain d) {
  return d == Domain::Source ? "source" : "target";
}

const char* class_name(int label) {
  switch (label) {
    case 0: return "downstairs";
    case 1: return "upstairs";
    case 2: return "negative";
    default: return "class";
  }
}

Sample::Sample(Tensor image, std::optional<int> label, Domain domain)
    : image_(std::move(image)), label_(label), domain_(domain) {
  if (image_.shape() != Shape{kImageChannels, kImageSize, kImageSize})
    throw shape_error("sample image must be [4,80,80], got " + shape_str(image_.shape()));
}

int Sample::label() const {
  if (taint_)
    throw state_error("label read on a target training sample (unsupervised "
                      "adaptation must not see target labels)");
  if (!label_)
    throw data_error("sample has no label");
  return *label_;
}

Tensor bilinear_resize(const Tensor& chw, int out_h, int out_w) {
  if (chw.rank() != 3)
    throw shape_error("bilinear_resize: expected [C,H,W], got " + shape_str(chw.shape()));
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int ch = 0; ch < c; ++ch) {
    const float* src = chw.data() + static_cast<size_t>(ch) * h * w;
    float* dst = out.data() + static_cast<size_t>(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const double fy = (oy + 0.5) * sy - 0.5;
      int y0 = static_cast<int>(std::floor(fy));
      double ty = fy - y0;
      if (y0 < 0) { y0 = 0; ty = 0.0; }
      int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
      if (y0 >= h) { y0 = h - 1; y1 = h - 1; ty = 0.0; }
      for (int ox = 0; ox < out_w; ++ox) {
        const double fx = (ox + 0.5) * sx - 0.5;
        int x0 = static_cast<int>(std::floor(fx));
        double tx = fx - x0;
        if (x0 < 0) { x0 = 0; tx = 0.0; }
        int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
        if (x0 >= w) { x0 = w - 1; x1 = w - 1; tx = 0.0; }
        const double top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
        const double bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
        dst[oy * out_w + ox] = static_cast<float>(top * (1.0 - ty) + bot * ty);
      }
    }
  }
  return out;
}

namespace {

// Min-max normalize one channel in place; near-constant channels become 0.
void normalize_channel(float* p, int n) {
  float lo = p[0], hi = p[0];
  for (int i = 1; i < n; ++i) {
    lo = std::min(lo, p[i]);
    hi = std::max(hi, p[i]);
  }
  const float span = hi - lo;
  if (span <= 1e-6f * std::max(1.0f, std::fabs(hi))) {
    std::fill(p, p + n, 0.0f);
    return;
  }
  for (int i = 0; i < n; ++i) p[i] = (p[i] - lo) / span;
}

}  // namespace

Tensor pack_rgbd(const Tensor& rgb, const Tensor& depth) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw shape_error("pack_rgbd: rgb must be [3,H,W], got " + shape_str(rgb.shape()));
  if (depth.rank() != 3 || depth.dim(0) != 1)
    throw shape_error("pack_rgbd: depth must be [1,H,W], got " + shape_str(depth.shape()));
  if (rgb.dim(1) != depth.dim(1) || rgb.dim(2) != depth.dim(2))
    throw shape_error("pack_rgbd: rgb " + shape_str(rgb.shape()) + " and depth " +
                      shape_str(depth.shape()) + " disagree on H,W");
  if (!rgb.all_finite() || !depth.all_finite())
    throw numeric_error("pack_rgbd: non-finite input values");

  const Tensor rgb_r = bilinear_resize(rgb, kImageSize, kImageSize);
  const Tensor depth_r = bilinear_resize(depth, kImageSize, kImageSize);
  Tensor out({kImageChannels, kImageSize, kImageSize});
  const int plane = kImageSize * kImageSize;
  std::copy(rgb_r.data(), rgb_r.data() + 3 * plane, out.data());
  std::copy(depth_r.data(), depth_r.data() + plane, out.data() + 3 * plane);
  for (int ch = 0; ch < kImageChannels; ++ch)
    normalize_channel(out.data() + static_cast<size_t>(ch) * plane, plane);
  return out;
}

namespace {

Dataset take(const Dataset& ds, const std::vector<int>& order, int from, int to,
             bool taint_target) {
  Dataset out;
  out.manifest_path = ds.manifest_path;
  out.samples.reserve(static_cast<size_t>(to - from));
  for (int i = from; i < to; ++i) {
    Sample s = ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
    if (taint_target && s.domain() == Domain::Target) s.mark_training_taint();
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split_source(const Dataset& ds, std::uint64_t seed) {
  if (ds.empty()) throw data_error("split_source: empty dataset");
  const int n = ds.size();
  Rng rng(seed, 0xda7a5e7);
  const std::vector<int> order = shuffled_indices(n, rng);
  const int n_train = static_cast<int>(std::ceil(0.8 * n));
  return {take(ds, order, 0, n_train, false), take(ds, order, n_train, n, false)};
}

std::pair<Dataset, Dataset> split_target(const Dataset& ds, std::uint64_t seed) {
  if (ds.empty()) throw data_error("split_target: empty dataset");
  const int n = ds.size();
  Rng rng(seed, 0xda7a5e8);
  const std::vector<int> order = shuffled_indices(n, rng);
  const int n_train = static_cast<int>(std::lround(0.4 * n));
  return {take(ds, order, 0, n_train, true), take(ds, order, n_train, n, false)};
}

BatchStream::BatchStream(const Dataset& source_train, const Dataset& target_train,
                         int batch_size, std::uint64_t seed)
    : src_(&source_train), tgt_(&target_train), batch_size_(batch_size),
      rng_(seed, 0xba7c4) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw config_error("batch size must be even and >= 2, got " +
                       std::to_string(batch_size));
  if (source_train.empty() || target_train.empty())
    throw data_error("batch stream needs non-empty source and target sets");
  const int half = batch_size_ / 2;
  batches_per_epoch_ = (src_->size() + half - 1) / half;
  reshuffle_source();
  reshuffle_target();
}

void BatchStream::reshuffle_source() {
  src_order_ = shuffled_indices(src_->size(), rng_);
  src_pos_ = 0;
}

void BatchStream::reshuffle_target() {
  tgt_order_ = shuffled_indices(tgt_->size(), rng_);
  tgt_pos_ = 0;
}

Batch BatchStream::next() {
  const int half = batch_size_ / 2;
  Batch batch;
  batch.images = Tensor({batch_size_, kImageChannels, kImageSize, kImageSize});
  batch.source_labels.reserve(static_cast<size_t>(half));
  batch.domains.assign(static_cast<size_t>(batch_size_), 0);
  const size_t image_len = static_cast<size_t>(kImageChannels) * kImageSize * kImageSize;

  int pad = 0;
  for (int i = 0; i < half; ++i) {
    int idx;
    if (src_pos_ < src_->size()) {
      idx = src_order_[static_cast<size_t>(src_pos_++)];
    } else {
      // Epoch exhausted mid-batch: pad by wrapping the same epoch order.
      idx = src_order_[static_cast<size_t>(pad++ % src_->size())];
      batch.wrapped = true;
    }
    const Sample& s = src_->samples[static_cast<size_t>(idx)];
    std::copy(s.image().data(), s.image().data() + image_len,
              batch.images.data() + static_cast<size_t>(i) * image_len);
    batch.source_labels.push_back(s.label());
  }
  if (src_pos_ >= src_->size()) reshuffle_source();

  for (int i = 0; i < half; ++i) {
    if (tgt_pos_ >= tgt_->size()) reshuffle_target();
    const int idx = tgt_order_[static_cast<size_t>(tgt_pos_++)];
    const Sample& s = tgt_->samples[static_cast<size_t>(idx)];
    std::copy(s.image().data(), s.image().data() + image_len,
              batch.images.data() + (static_cast<size_t>(half) + i) * image_len);
    batch.domains[static_cast<size_t>(half + i)] = 1;
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

constexpr int kSz = kImageSize;
constexpr int kPlane = kSz * kSz;

struct BlobSpec {
  double cy, cx, r, amp;
  double tint[3];
};

inline float clamp01(double v) {
  return static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
}

// Draws the domain-shared base image for one class. Bands are shared geometry
// for classes 0 and 1; the class signal lives in the band tint hue and in the
// direction of the depth ramp.
Tensor base_image(int cls, Rng& rng) {
  Tensor img({kImageChannels, kSz, kSz});
  float* r = img.data();
  float* g = r + kPlane;
  float* b = g + kPlane;
  float* d = b + kPlane;

  const double bg = rng.uniform(0.40, 0.55);
  const double illum = rng.uniform(0.0, 0.06);

  if (cls == 0 || cls == 1) {
    const double period = rng.uniform(9.0, 15.0);
    const double phase = rng.uniform(0.0, period);
    const double duty = rng.uniform(0.45, 0.60);
    const double delta = rng.uniform(0.18, 0.26);
    // Downstairs bands tint warm, upstairs bands tint cold. The hue carries
    // the easy (domain-fragile) cue; the depth ramp carries the robust one.
    const double tint[3] = {cls == 0 ? 1.0 : -0.5, -0.5, cls == 0 ? -0.5 : 1.0};
    const double d0 = rng.uniform(0.15, 0.35);
    const double slope = rng.uniform(0.35, 0.55);
    for (int y = 0; y < kSz; ++y) {
      const double base = bg + illum * (y / 79.0);
      const double tread = std::floor((y + phase) / period);
      const bool band = ((y + phase) / period - tread) < duty;
      // Depth is stepped per tread so the ramp reads like stairs.
      const double frac = (tread * period - phase + period * 0.5) / 79.0;
      const double ramp = cls == 0 ? frac : 1.0 - frac;
      const double depth = d0 + slope * std::min(1.0, std::max(0.0, ramp));
      for (int x = 0; x < kSz; ++x) {
        const int i = y * kSz + x;
        const double add = band ? delta : 0.0;
        r[i] = clamp01(base + add * tint[0]);
        g[i] = clamp01(base + add * tint[1]);
        b[i] = clamp01(base + add * tint[2]);
        d[i] = clamp01(depth);
      }
    }
  } else {
    const int n_blobs = 6;
    BlobSpec blobs[n_blobs];
    for (auto& bl : blobs) {
      bl.cy = rng.uniform(0.0, kSz);
      bl.cx = rng.uniform(0.0, kSz);
      bl.r = rng.uniform(6.0, 18.0);
      bl.amp = rng.uniform(0.10, 0.25);
      const double hue = rng.uniform(0.0, 6.283185307179586);
      bl.tint[0] = std::cos(hue);
      bl.tint[1] = std::cos(hue - 2.0943951023931953);
      bl.tint[2] = std::cos(hue + 2.0943951023931953);
    }
    const double d0 = rng.uniform(0.30, 0.60);
    for (int y = 0; y < kSz; ++y) {
      const double base = bg + illum * (y / 79.0);
      for (int x = 0; x < kSz; ++x) {
        const int i = y * kSz + x;
        double cr = base, cg = base, cb = base;
        for (const auto& bl : blobs) {
          const double dy = y - bl.cy, dx = x - bl.cx;
          const double m = bl.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * bl.r * bl.r));
          cr += m * bl.tint[0];
          cg += m * bl.tint[1];
          cb += m * bl.tint[2];
        }
        r[i] = clamp01(cr);
        g[i] = clamp01(cg);
        b[i] = clamp01(cb);
        d[i] = clamp01(d0);
      }
    }
  }

  // Mild sensor noise shared by both domains.
  for (int i = 0; i < kPlane; ++i) {
    r[i] = clamp01(r[i] + 0.02 * rng.normal());
    g[i] = clamp01(g[i] + 0.02 * rng.normal());
    b[i] = clamp01(b[i] + 0.02 * rng.normal());
    d[i] = clamp01(d[i] + 0.01 * rng.normal());
  }
  return img;
}

// Target-domain covariate shift: hue rotation about the gray axis plus a
// low-frequency texture field plus pixel noise, all proportional to s so
// s = 0 leaves the image bit-identical.
void apply_shift(Tensor& img, double s, Rng& rng) {
  float* r = img.data();
  float* g = r + kPlane;
  float* b = g + kPlane;
  float* d = b + kPlane;

  const double theta = s * (2.0943951023931953 + rng.uniform(-0.35, 0.35));
  const double c = std::cos(theta), sn = std::sin(theta);
  const double k = (1.0 - c) / 3.0, q = sn / 1.7320508075688772;
  // Rotation about (1,1,1)/sqrt(3): M = c*I + (1-c)/3 * J + q * K.
  const double m[3][3] = {{c + k, k - q, k + q},
                          {k + q, c + k, k - q},
                          {k - q, k + q, c + k}};

  struct Wave { double ay, ax, ph, amp; };
  Wave waves[3];
  for (auto& wv : waves) {
    wv.ay = rng.uniform(0.5, 2.5) * 6.283185307179586 / kSz;
    wv.ax = rng.uniform(0.5, 2.5) * 6.283185307179586 / kSz;
    wv.ph = rng.uniform(0.0, 6.283185307179586);
    wv.amp = rng.uniform(0.05, 0.12);
  }

  const double noise_rgb = s * 0.25;
  const double noise_d = (s / 4.0) * 0.25;
  for (int y = 0; y < kSz; ++y) {
    for (int x = 0; x < kSz; ++x) {
      const int i = y * kSz + x;
      const double cr = r[i], cg = g[i], cb = b[i];
      double nr = m[0][0] * cr + m[0][1] * cg + m[0][2] * cb;
      double ng = m[1][0] * cr + m[1][1] * cg + m[1][2] * cb;
      double nb = m[2][0] * cr + m[2][1] * cg + m[2][2] * cb;
      double tex = 0.0;
      for (const auto& wv : waves) tex += wv.amp * std::sin(wv.ay * y + wv.ax * x + wv.ph);
      tex *= s;
      nr += tex + noise_rgb * rng.normal();
      ng += tex + noise_rgb * rng.normal();
      nb += tex + noise_rgb * rng.normal();
      r[i] = clamp01(nr);
      g[i] = clamp01(ng);
      b[i] = clamp01(nb);
      d[i] = clamp01(d[i] + noise_d * rng.normal());
    }
  }
}

}  // namespace

std::pair<Dataset, Dataset> synth_domain_pair(const SynthConfig& cfg,
                                              std::uint64_t seed) {
  if (cfg.per_class < 1)
    throw config_error("synth: per_class must be >= 1, got " +
                       std::to_string(cfg.per_class));
  if (cfg.shift < 0.0 || cfg.shift > 1.0)
    throw config_error("synth: shift must be in [0,1], got " +
                       std::to_string(cfg.shift));
  Dataset source, target;
  source.manifest_path = "synth:source";
  target.manifest_path = "synth:target";
  const int total = cfg.per_class * kNumClasses;
  source.samples.reserve(static_cast<size_t>(total));
  target.samples.reserve(static_cast<size_t>(total));
  for (int idx = 0; idx < total; ++idx) {
    const int cls = idx / cfg.per_class;
    // Paired streams: the base image draws identically for both domains; the
    // shift uses its own stream so s = 0 reproduces the source pixels.
    Rng rng_src(seed, 2u * static_cast<std::uint64_t>(idx));
    Rng rng_tgt(seed, 2u * static_cast<std::uint64_t>(idx));
    Rng rng_shift(seed, 2u * static_cast<std::uint64_t>(idx) + 1u);
    source.samples.emplace_back(base_image(cls, rng_src), cls, Domain::Source);
    Tensor shifted = base_image(cls, rng_tgt);
    apply_shift(shifted, cfg.shift, rng_shift);
    target.samples.emplace_back(std::move(shifted), cls, Domain::Target);
  }
  return {std::move(source), std::move(target)};
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

Domain parse_domain(const std::string& s, const std::string& where) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw data_error(where + ": domain must be 'source' or 'target', got '" + s + "'");
}

std::optional<int> parse_label(const std::string& s, const std::string& where) {
  if (s.empty()) return std::nullopt;
  try {
    const int v = std::stoi(s);
    if (v < 0) throw data_error(where + ": negative label " + s);
    return v;
  } catch (const std::invalid_argument&) {
    throw data_error(where + ": bad label '" + s + "'");
  } catch (const std::out_of_range&) {
    throw data_error(where + ": label out of range '" + s + "'");
  }
}

void check_packed_image(const Tensor& img, const std::string& where) {
  if (img.shape() != Shape{kImageChannels, kImageSize, kImageSize})
    throw data_error(where + ": expected a [4,80,80] tensor, got " +
                     shape_str(img.shape()));
  for (int i = 0; i < img.size(); ++i)
    if (!(img[i] >= 0.0f && img[i] <= 1.0f))
      throw data_error(where + ": pixel values must lie in [0,1]");
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw io_error("cannot open manifest " + csv_path.string());
  const std::filesystem::path base = csv_path.parent_path();

  std::string header;
  if (!std::getline(is, header))
    throw data_error("empty manifest " + csv_path.string());
  const auto head = split_csv_line(header);
  bool packed;
  if (head == std::vector<std::string>{"path", "label", "domain"}) {
    packed = true;
  } else if (head == std::vector<std::string>{"rgb_path", "depth_path", "label", "domain"}) {
    packed = false;
  } else {
    throw data_error(csv_path.string() + ":1: unrecognized manifest header '" + header + "'");
  }

  Dataset ds;
  ds.manifest_path = csv_path.string();
  std::string line;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    const auto fields = split_csv_line(line);
    if (packed) {
      if (fields.size() != 3) throw data_error(where + ": expected 3 fields");
      Tensor img = load_rdt(base / fields[0]);
      check_packed_image(img, where + " (" + fields[0] + ")");
      ds.samples.emplace_back(std::move(img), parse_label(fields[1], where),
                              parse_domain(fields[2], where));
    } else {
      if (fields.size() != 4) throw data_error(where + ": expected 4 fields");
      const Tensor rgb = load_rdt(base / fields[0]);
      const Tensor depth = load_rdt(base / fields[1]);
      ds.samples.emplace_back(pack_rgbd(rgb, depth), parse_label(fields[2], where),
                              parse_domain(fields[3], where));
    }
  }
  return ds;
}

void write_manifest_dataset(const Dataset& ds, const std::filesystem::path& dir,
                            const std::string& stem, bool write_labels) {
  std::filesystem::create_directories(dir / "rdt");
  std::ofstream csv(dir / (stem + ".csv"));
  if (!csv) throw io_error("cannot write manifest in " + dir.string());
  csv << "path,label,domain\n";
  char name[64];
  for (int i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[static_cast<size_t>(i)];
    std::snprintf(name, sizeof(name), "rdt/%s_%05d.rdt", stem.c_str(), i);
    save_rdt(dir / name, s.image());
    csv << name << ",";
    if (write_labels && s.has_label()) csv << s.label();
    csv << "," << domain_name(s.domain()) << "\n";
  }
  if (!csv) throw io_error("write failed for manifest in " + dir.string());
}

}  // namespace dann
