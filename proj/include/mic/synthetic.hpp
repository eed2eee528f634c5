#pragma once

// Desk-scale stand-in dataset: three visually distinct grayscale classes
// written in the train/<CLASS>/ layout.
//   COVID19   (0) centered Gaussian blob, sigma = size / 6
//   NORMAL    (1) vertical stripes, period size / 8
//   PNEUMONIA (2) checkerboard, cell size / 8
// Each pixel gets additive uniform noise of amplitude 0.1 * 255, clamped.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mic/image_io.hpp"
#include "mic/rng.hpp"

namespace mic {

inline constexpr const char* kSyntheticGenerator = "mic-synthetic-v1";
inline const std::vector<std::string> kSyntheticClasses{"COVID19", "NORMAL", "PNEUMONIA"};

struct SyntheticSummary {
  std::size_t train_files = 0;
  std::size_t test_files = 0;
};

/// Noise-free class prototype in 0..255.
inline Image synthetic_pattern(int cls, std::size_t size) {
  Image img({size, size, 1});
  const double center = (double(size) - 1.0) / 2.0;
  const double sigma = double(size) / 6.0;
  const std::size_t period = std::max<std::size_t>(2, size / 8);
  const std::size_t cell = std::max<std::size_t>(1, size / 8);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      double v = 0.0;
      switch (cls) {
        case 0: {
          const double dy = double(i) - center, dx = double(j) - center;
          v = 255.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          break;
        }
        case 1: v = (j % period) < period / 2 ? 255.0 : 0.0; break;
        case 2: v = ((i / cell) + (j / cell)) % 2 == 0 ? 255.0 : 0.0; break;
        default: throw std::invalid_argument("synthetic class must be 0, 1, or 2");
      }
      img[i * size + j] = float(v);
    }
  return img;
}

/// Pattern plus seeded noise, rounded to u8 values.
inline Image synthetic_image(int cls, std::size_t size, std::uint64_t seed, std::uint64_t split,
                             std::uint64_t index) {
  Image img = synthetic_pattern(cls, size);
  RngStream rng(seed, stream_id(StreamPurpose::Synthetic, split, std::uint64_t(cls), index));
  const double amp = 0.1 * 255.0;
  for (auto& v : img.data())
    v = float(std::clamp(std::round(double(v) + rng.uniform(-amp, amp)), 0.0, 255.0));
  return img;
}

/// Writes out/train/<CLASS>/img_NNNN.png (and out/test/... when
/// test_per_class > 0) plus out/manifest.json.
inline SyntheticSummary gen_synthetic(const std::filesystem::path& out, std::size_t per_class,
                                      std::size_t size, std::uint64_t seed,
                                      std::size_t test_per_class = 0) {
  namespace fs = std::filesystem;
  if (per_class == 0) throw std::invalid_argument("per-class count must be >= 1");
  if (size < 8) throw std::invalid_argument("synthetic image size must be >= 8");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw std::runtime_error("cannot create output directory " + out.string());

  SyntheticSummary summary;
  auto write_split = [&](const char* split, std::uint64_t split_id, std::size_t count) {
    for (std::size_t c = 0; c < kSyntheticClasses.size(); ++c) {
      const fs::path dir = out / split / kSyntheticClasses[c];
      fs::create_directories(dir, ec);
      if (ec) throw std::runtime_error("cannot create " + dir.string());
      for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%04zu.png", i);
        write_file_bytes(dir / name, encode_png(synthetic_image(int(c), size, seed, split_id, i)));
      }
    }
    return count * kSyntheticClasses.size();
  };
  summary.train_files = write_split("train", 0, per_class);
  if (test_per_class > 0) summary.test_files = write_split("test", 1, test_per_class);

  const nlohmann::json manifest = {
      {"generator", kSyntheticGenerator},
      {"seed", seed},
      {"per_class", per_class},
      {"test_per_class", test_per_class},
      {"size", size},
      {"classes", kSyntheticClasses},
      {"noise_amplitude", 0.1 * 255.0},
      {"rng", kRngGeneratorId},
  };
  std::ofstream mf(out / "manifest.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write manifest in " + out.string());
  mf << manifest.dump(2) << "\n";
  return summary;
}

}  // namespace mic
