#pragma once

// Checkpoint file (.micf), all integers little-endian:
//   "MICF" | u32 version | u64 header length | header JSON (UTF-8) | blobs
// Blobs are raw f32 arrays in this order: parameter values (registry order),
// BatchNorm running mean/var (layer order), then, when the header's
// optimizer_state is true, Adam m and v for each parameter in registry order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mic/image_io.hpp"
#include "mic/model.hpp"
#include "mic/rng.hpp"

namespace mic {

inline constexpr char kCheckpointMagic[4] = {'M', 'I', 'C', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  nlohmann::json extra = nlohmann::json::object();
};

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
  bool has_optimizer = false;
  std::int64_t adam_steps = 0;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> b, std::size_t pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(b[pos + i]) << (8 * i);
  return v;
}

inline void put_blob(std::vector<std::uint8_t>& out, const Tensor<float>& t) {
  for (float f : t.data()) put_le(out, std::bit_cast<std::uint32_t>(f));
}

struct BlobRef {
  std::string name;
  Tensor<float>* target;
};

inline std::vector<BlobRef> blob_layout(Model<float>& model, bool with_optimizer) {
  std::vector<BlobRef> out;
  for (auto* p : model.params()) out.push_back({p->name, &p->value});
  for (auto& layer : model.layers())
    if (auto* bn = std::get_if<BatchNorm<float>>(&layer)) {
      out.push_back({bn->name() + "/running_mean", &bn->running_mean()});
      out.push_back({bn->name() + "/running_var", &bn->running_var()});
    }
  if (with_optimizer)
    for (auto* p : model.params()) {
      out.push_back({p->name + "/adam_m", &p->adam_m});
      out.push_back({p->name + "/adam_v", &p->adam_v});
    }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, bool include_optimizer,
                                                   const CheckpointMeta& meta,
                                                   std::int64_t adam_steps = 0) {
  auto& m = const_cast<Model<float>&>(model);
  const auto layout = detail::blob_layout(m, include_optimizer);
  nlohmann::json bn_init = nlohmann::json::array();
  for (const auto& layer : model.layers())
    if (const auto* bn = std::get_if<BatchNorm<float>>(&layer)) bn_init.push_back(bn->stats_initialized());
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto& b : layout) blobs.push_back({{"name", b.name}, {"count", b.target->size()}});
  const nlohmann::json header = {
      {"magic", "MICF"},
      {"format_version", kCheckpointVersion},
      {"arch", model.spec()},
      {"dtype", "f32"},
      {"epoch", meta.epoch},
      {"rng", {{"seed", meta.seed}, {"generator", kRngGeneratorId}}},
      {"optimizer_state", include_optimizer},
      {"adam_steps", include_optimizer ? adam_steps : 0},
      {"class_names", meta.class_names},
      {"batchnorm_stats_initialized", bn_init},
      {"blobs", blobs},
      {"extra", meta.extra},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, std::uint64_t(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& b : layout) detail::put_blob(out, *b.target);
  return out;
}

/// Validates magic, version, header, and every blob length before returning.
inline LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointMagicError("not a MICF checkpoint (bad magic)");
  if (bytes.size() < 16) throw CheckpointTruncatedError("checkpoint truncated inside preamble");
  const auto version = detail::get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto header_len = detail::get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw CheckpointTruncatedError("checkpoint header truncated");

  nlohmann::json header;
  ArchitectureSpec spec;
  CheckpointMeta meta;
  bool has_opt = false;
  std::int64_t steps = 0;
  std::vector<bool> bn_init;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(header_len));
    if (header.at("magic") != "MICF") throw CheckpointMagicError("header magic mismatch");
    if (header.at("format_version") != kCheckpointVersion)
      throw CheckpointVersionError("header version mismatch");
    if (header.at("dtype") != "f32") throw CheckpointHeaderError("unsupported dtype");
    if (header.at("rng").at("generator") != kRngGeneratorId)
      throw CheckpointHeaderError("checkpoint uses unknown RNG generator " +
                                  header["rng"]["generator"].dump());
    spec = header.at("arch").get<ArchitectureSpec>();
    meta.epoch = header.at("epoch").get<int>();
    meta.seed = header.at("rng").at("seed").get<std::uint64_t>();
    meta.class_names = header.at("class_names").get<std::vector<std::string>>();
    meta.extra = header.value("extra", nlohmann::json::object());
    has_opt = header.at("optimizer_state").get<bool>();
    steps = header.at("adam_steps").get<std::int64_t>();
    bn_init = header.at("batchnorm_stats_initialized").get<std::vector<bool>>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointHeaderError(std::string("malformed checkpoint header: ") + e.what());
  }

  Model<float> model = [&] {
    try {
      return build_model<float>(spec, meta.seed);
    } catch (const std::exception& e) {
      throw CheckpointShapeError(std::string("checkpoint architecture is invalid: ") + e.what());
    }
  }();
  const auto layout = detail::blob_layout(model, has_opt);
  const auto& blobs = header.at("blobs");
  if (!blobs.is_array() || blobs.size() != layout.size())
    throw CheckpointShapeError("checkpoint blob list does not match the architecture");
  std::size_t pos = 16 + header_len;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& entry = blobs[i];
    if (entry.value("name", "") != layout[i].name ||
        entry.value("count", std::size_t{0}) != layout[i].target->size())
      throw CheckpointShapeError("blob " + std::to_string(i) + " (" + entry.dump() +
                                 ") does not match expected " + layout[i].name + " of " +
                                 std::to_string(layout[i].target->size()) + " values");
    const std::size_t nbytes = layout[i].target->size() * 4;
    if (bytes.size() - pos < nbytes)
      throw CheckpointTruncatedError("blob '" + layout[i].name + "' is truncated");
    pos += nbytes;
  }
  if (pos != bytes.size())
    throw CheckpointTruncatedError(std::to_string(bytes.size() - pos) +
                                   " unexpected trailing bytes after the last blob");

  std::size_t bn_index = 0;
  for (auto& layer : model.layers())
    if (auto* bn = std::get_if<BatchNorm<float>>(&layer)) {
      if (bn_index >= bn_init.size())
        throw CheckpointShapeError("batchnorm_stats_initialized has too few entries");
      bn->set_stats_initialized(bn_init[bn_index++]);
    }
  if (bn_index != bn_init.size())
    throw CheckpointShapeError("batchnorm_stats_initialized has too many entries");

  pos = 16 + header_len;
  for (const auto& b : layout)
    for (auto& f : b.target->data()) {
      f = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
      pos += 4;
    }
  return LoadedCheckpoint{std::move(model), std::move(meta), has_opt, steps};
}

inline void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                            bool include_optimizer, const CheckpointMeta& meta = {},
                            std::int64_t adam_steps = 0) {
  write_file_bytes(path, encode_checkpoint(model, include_optimizer, meta, adam_steps));
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::exception&) {
    throw CheckpointError("cannot read checkpoint " + path.string());
  }
  return decode_checkpoint(bytes);
}

}  // namespace mic
