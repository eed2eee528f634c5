#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "mic/image_io.hpp"
#include "mic/layers.hpp"
#include "mic/rng.hpp"
#include "mic/tensor.hpp"

namespace mic {

namespace fs = std::filesystem;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One labeled image, either on disk or already in memory ([h,w,c], 0..255).
struct SampleRecord {
  std::variant<fs::path, Image> source;
  int label = 0;
  std::string class_name;

  bool operator==(const SampleRecord&) const = default;
};

struct PipelineConfig {
  std::size_t height = 180;
  std::size_t width = 180;
  std::size_t channels = 3;
  std::size_t batch_size = 32;
  double val_fraction = 0.2;
  bool augment = true;
  double rotation_limit_deg = 0.05 * 360.0;  // 18 degrees
  double zoom_limit = 0.10;
  double flip_probability = 0.5;
  std::size_t prefetch_depth = 2;
  std::uint64_t seed = 42;
  bool strict = true;  // abort on undecodable files instead of skipping them

  void validate() const {
    if (height == 0 || width == 0) throw std::invalid_argument("image size must be positive");
    if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
      throw std::invalid_argument("val_fraction must lie in (0, 1)");
    if (!(rotation_limit_deg >= 0.0) || !(zoom_limit >= 0.0) || zoom_limit >= 1.0)
      throw std::invalid_argument("augmentation limits must be nonnegative (zoom < 1)");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
      throw std::invalid_argument("flip_probability must lie in [0, 1]");
  }
};

struct Batch {
  Tensor<float> inputs;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

// ---------------------------------------------------------------------------
// Directory ingestion

struct DatasetIndex {
  std::vector<std::string> class_names;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  bool has_test = false;
  std::size_t skipped_files = 0;
};

inline bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pgm" || ext == ".png") return true;
  return jpeg_supported() && (ext == ".jpg" || ext == ".jpeg");
}

namespace detail {

inline std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename().string().starts_with(".")) continue;
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<SampleRecord> scan_split(const fs::path& dir,
                                            const std::vector<std::string>& classes,
                                            std::size_t& skipped, bool require_all) {
  std::vector<SampleRecord> records;
  const auto subdirs = sorted_entries(dir, true);
  for (const auto& sub : subdirs) {
    const std::string name = sub.filename().string();
    const auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end())
      throw DatasetError(dir.string() + ": class folder '" + name +
                         "' is not present in train/");
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const fs::path sub = dir / classes[c];
    if (!fs::is_directory(sub)) {
      if (require_all) throw DatasetError("missing class folder " + sub.string());
      continue;
    }
    std::size_t found = 0;
    for (const auto& f : sorted_entries(sub, false)) {
      if (!is_image_file(f)) {
        ++skipped;
        continue;
      }
      records.push_back({f, int(c), classes[c]});
      ++found;
    }
    if (found == 0) throw DatasetError("class folder '" + classes[c] + "' in " + dir.string() +
                                       " contains no images");
  }
  return records;
}

}  // namespace detail

/// Reads root/train/<CLASS>/* and, when present, root/test/<CLASS>/*. Class
/// indices follow the sorted train/ folder names.
inline DatasetIndex scan_dataset_dir(const fs::path& root) {
  const fs::path train = root / "train";
  if (!fs::is_directory(train)) throw DatasetError("dataset root " + root.string() +
                                                   " has no train/ directory");
  DatasetIndex idx;
  for (const auto& d : detail::sorted_entries(train, true))
    idx.class_names.push_back(d.filename().string());
  if (idx.class_names.size() < 2)
    throw DatasetError("train/ must contain at least 2 class folders, found " +
                       std::to_string(idx.class_names.size()));
  idx.train = detail::scan_split(train, idx.class_names, idx.skipped_files, true);
  const fs::path test = root / "test";
  if (fs::is_directory(test)) {
    idx.has_test = true;
    idx.test = detail::scan_split(test, idx.class_names, idx.skipped_files, false);
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Stratified split

/// Within each class, shuffles with a seed-derived stream and moves the last
/// ceil(fraction * n) records to validation.
inline std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_train_val(
    const std::vector<SampleRecord>& records, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("validation fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
  std::vector<SampleRecord> train, val;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw DatasetError("class " + std::to_string(label) + " ('" + records[idx[0]].class_name +
                         "') has fewer than 2 samples; cannot split");
    RngStream rng(seed, stream_id(StreamPurpose::Split, std::uint64_t(label)));
    shuffle_in_place(idx, rng);
    auto n_val = std::size_t(std::ceil(fraction * double(idx.size()) - 1e-9));
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    const std::size_t n_train = idx.size() - n_val;
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? train : val).push_back(records[idx[i]]);
  }
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentDraw {
  bool flip = false;
  double rotation_deg = 0.0;
  double zoom = 1.0;
};

/// Always consumes the same number of draws so streams stay aligned.
inline AugmentDraw draw_augment(RngStream& rng, const PipelineConfig& cfg) {
  AugmentDraw d;
  const double uf = rng.next_double(), ur = rng.next_double(), uz = rng.next_double();
  d.flip = uf < cfg.flip_probability;
  d.rotation_deg = cfg.rotation_limit_deg * (2.0 * ur - 1.0);
  d.zoom = 1.0 + cfg.zoom_limit * (2.0 * uz - 1.0);
  return d;
}

inline Image flip_horizontal(const Image& x) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Image y(x.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) y[(i * w + j) * c + k] = x[(i * w + (w - 1 - j)) * c + k];
  return y;
}

namespace detail {

/// Bilinear read at fractional (sy, sx); taps outside the image read 0.
inline float sample_zero_fill(const Image& x, double sy, double sx, std::size_t k) {
  const auto h = std::ptrdiff_t(x.dim(0)), w = std::ptrdiff_t(x.dim(1));
  const std::size_t c = x.dim(2);
  const double fy = std::floor(sy), fx = std::floor(sx);
  const auto y0 = std::ptrdiff_t(fy), x0 = std::ptrdiff_t(fx);
  const double wy = sy - fy, wx = sx - fx;
  auto tap = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
    if (yy < 0 || xx < 0 || yy >= h || xx >= w) return 0.0;
    return x[(std::size_t(yy) * std::size_t(w) + std::size_t(xx)) * c + k];
  };
  const double top = tap(y0, x0) * (1.0 - wx) + tap(y0, x0 + 1) * wx;
  const double bot = tap(y0 + 1, x0) * (1.0 - wx) + tap(y0 + 1, x0 + 1) * wx;
  return float(top * (1.0 - wy) + bot * wy);
}

/// Inverse-maps every destination pixel through `map(dy, dx) -> (sy, sx)`,
/// with offsets measured from the image center.
template <typename Map>
Image remap(const Image& x, Map map) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const double cy = (double(h) - 1.0) / 2.0, cx = (double(w) - 1.0) / 2.0;
  Image y(x.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto [oy, ox] = map(double(i) - cy, double(j) - cx);
      for (std::size_t k = 0; k < c; ++k)
        y[(i * w + j) * c + k] = sample_zero_fill(x, cy + oy, cx + ox, k);
    }
  return y;
}

}  // namespace detail

/// Rotation by `degrees` about the image center, zero fill outside.
inline Image rotate_image(const Image& x, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  return detail::remap(x, [&](double dy, double dx) {
    return std::pair{-sn * dx + cs * dy, cs * dx + sn * dy};
  });
}

/// Zoom with source = center + (dst - center) * scale; scale > 1 zooms out.
inline Image zoom_image(const Image& x, double scale) {
  return detail::remap(x, [&](double dy, double dx) { return std::pair{dy * scale, dx * scale}; });
}

/// flip -> rotate -> zoom.
inline Image apply_augment(const Image& x, const AugmentDraw& d) {
  Image y = d.flip ? flip_horizontal(x) : x;
  y = rotate_image(y, d.rotation_deg);
  return zoom_image(y, d.zoom);
}

inline Image augment_sample(const Image& x, RngStream& rng, const PipelineConfig& cfg) {
  return apply_augment(x, draw_augment(rng, cfg));
}

// ---------------------------------------------------------------------------
// Batching

class BatchLoader;

/// Batches for one epoch. With prefetch depth > 0 a producer thread prepares
/// up to `depth` batches ahead; content and order do not depend on depth.
class BatchStream {
 public:
  BatchStream(const BatchLoader& loader, int epoch);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  std::optional<Batch> next();

 private:
  void produce();

  const BatchLoader& loader_;
  int epoch_;
  std::vector<std::size_t> order_;
  std::size_t num_batches_;
  std::size_t next_index_ = 0;
  std::size_t depth_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::optional<Batch>> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  bool done_ = false;
  std::thread producer_;
};

class BatchLoader {
 public:
  /// `training` enables per-epoch shuffling and (if configured) augmentation.
  BatchLoader(std::vector<SampleRecord> records, PipelineConfig cfg, bool training)
      : records_(std::move(records)), cfg_(std::move(cfg)), training_(training) {
    cfg_.validate();
  }

  const std::vector<SampleRecord>& records() const { return records_; }
  const PipelineConfig& config() const { return cfg_; }
  bool training() const { return training_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t num_batches() const { return (records_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }
  std::size_t skipped() const { return skipped_.load(); }

  std::vector<std::size_t> epoch_order(int epoch) const {
    std::vector<std::size_t> order(records_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (training_) {
      RngStream rng(cfg_.seed, stream_id(StreamPurpose::Shuffle, std::uint64_t(epoch)));
      shuffle_in_place(order, rng);
    }
    return order;
  }

  /// decode -> resize -> rescale -> (training) augment. Output in [0,1].
  Image load_sample(std::size_t index, int epoch) const {
    const auto& rec = records_.at(index);
    Image img = std::holds_alternative<fs::path>(rec.source)
                    ? load_image(std::get<fs::path>(rec.source), cfg_.channels)
                    : convert_channels(std::get<Image>(rec.source), cfg_.channels);
    img = rescale(resize_bilinear(img, cfg_.height, cfg_.width));
    if (training_ && cfg_.augment) {
      RngStream rng(cfg_.seed,
                    stream_id(StreamPurpose::Augment, std::uint64_t(epoch), std::uint64_t(index)));
      img = augment_sample(img, rng, cfg_);
    }
    for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
    return img;
  }

  /// Returns nullopt when every sample of the batch was skipped.
  std::optional<Batch> make_batch(int epoch, std::size_t batch_index,
                                  const std::vector<std::size_t>& order) const {
    const std::size_t begin = batch_index * cfg_.batch_size;
    const std::size_t end = std::min(begin + cfg_.batch_size, order.size());
    const std::size_t per = cfg_.height * cfg_.width * cfg_.channels;
    std::vector<float> data;
    data.reserve((end - begin) * per);
    Batch b;
    for (std::size_t i = begin; i < end; ++i) {
      Image img;
      try {
        img = load_sample(order[i], epoch);
      } catch (const ImageError& e) {
        if (cfg_.strict) throw;
        ++skipped_;
        continue;
      }
      data.insert(data.end(), img.data().begin(), img.data().end());
      b.labels.push_back(records_[order[i]].label);
    }
    if (b.labels.empty()) return std::nullopt;
    b.inputs = Tensor<float>({b.labels.size(), cfg_.height, cfg_.width, cfg_.channels}, std::move(data));
    return b;
  }

  std::unique_ptr<BatchStream> stream(int epoch) const {
    return std::make_unique<BatchStream>(*this, epoch);
  }

 private:
  std::vector<SampleRecord> records_;
  PipelineConfig cfg_;
  bool training_;
  mutable std::atomic<std::size_t> skipped_{0};
};

inline BatchStream::BatchStream(const BatchLoader& loader, int epoch)
    : loader_(loader),
      epoch_(epoch),
      order_(loader.epoch_order(epoch)),
      num_batches_(loader.num_batches()),
      depth_(loader.config().prefetch_depth) {
  if (depth_ > 0) producer_ = std::thread([this] { produce(); });
}

inline BatchStream::~BatchStream() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (producer_.joinable()) producer_.join();
}

inline void BatchStream::produce() {
  try {
    for (std::size_t i = 0; i < num_batches_; ++i) {
      auto batch = loader_.make_batch(epoch_, i, order_);
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || queue_.size() < depth_; });
      if (stop_) return;
      queue_.push_back(std::move(batch));
      cv_.notify_all();
    }
  } catch (...) {
    std::lock_guard lock(mu_);
    error_ = std::current_exception();
  }
  std::lock_guard lock(mu_);
  done_ = true;
  cv_.notify_all();
}

inline std::optional<Batch> BatchStream::next() {
  for (;;) {
    if (depth_ == 0) {
      if (next_index_ >= num_batches_) return std::nullopt;
      auto b = loader_.make_batch(epoch_, next_index_++, order_);
      if (b) return b;
      continue;
    }
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || done_; });
    if (queue_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    auto b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    if (b) return b;
  }
}

}  // namespace mic
