#pragma once

// Run configuration for the `train` command. JSON layout:
//   {
//     "seed": 42, "rng_generator": "philox4x32-10",
//     "train":    {max_epochs, batch_size, base_lr, lr_decay_factor, lr_decay_every,
//                  patience, min_delta, deterministic},
//     "pipeline": {height, width, channels, val_fraction, augment, rotation_limit_deg,
//                  zoom_limit, flip_probability, prefetch_depth, strict},
//     "arch":     {arch, filters, block_dropout, head_dropout, l2, dense_width},
//     "paths":    {data, out, checkpoint}   (checkpoint defaults to <out>/best.micf)
//   }
// Every key is optional; unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mic/data.hpp"
#include "mic/model.hpp"
#include "mic/optim.hpp"
#include "mic/rng.hpp"

namespace mic {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ArchChoice {
  std::string arch = "ccnn";
  std::optional<std::vector<std::size_t>> filters;
  std::optional<double> block_dropout;
  std::optional<double> head_dropout;
  std::optional<double> l2;
  std::optional<std::size_t> dense_width;
};

struct RunConfig {
  std::uint64_t seed = 42;
  TrainConfig train;
  PipelineConfig pipeline;
  ArchChoice arch;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint_path;

  /// Architecture defaults for the chosen id with overrides applied.
  ArchitectureSpec resolve_arch(std::size_t num_classes) const {
    ArchitectureSpec s = ArchitectureSpec::defaults_for(arch.arch, pipeline.height, pipeline.width,
                                                        pipeline.channels, num_classes);
    if (arch.filters) s.filters = *arch.filters;
    if (arch.block_dropout) s.block_dropout = *arch.block_dropout;
    if (arch.head_dropout) s.head_dropout = *arch.head_dropout;
    if (arch.l2) s.l2 = *arch.l2;
    if (arch.dense_width) s.dense_width = *arch.dense_width;
    return s;
  }

  /// Copies shared fields and validates everything; throws ConfigError.
  void finalize() {
    train.seed = seed;
    pipeline.seed = seed;
    pipeline.batch_size = train.batch_size;
    try {
      train.validate();
      pipeline.validate();
      resolve_arch(3).validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

template <typename V>
void read_opt(const nlohmann::json& j, const char* key, std::optional<V>& dst,
              const std::string& where) {
  if (!j.contains(key)) return;
  V v;
  read_key(j, key, v, where);
  dst = v;
}

}  // namespace detail

/// Overlays the keys present in `j` onto `cfg`.
inline void apply_json(RunConfig& cfg, const nlohmann::json& j) {
  using detail::read_key;
  detail::reject_unknown(j, {"seed", "rng_generator", "train", "pipeline", "arch", "paths"}, "config");
  read_key(j, "seed", cfg.seed, "config");
  if (j.contains("rng_generator") && j["rng_generator"] != kRngGeneratorId)
    throw ConfigError("rng_generator " + j["rng_generator"].dump() + " is not supported (this build uses " +
                      kRngGeneratorId + ")");
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t,
                           {"max_epochs", "batch_size", "base_lr", "lr_decay_factor",
                            "lr_decay_every", "patience", "min_delta", "deterministic"},
                           "train");
    read_key(t, "max_epochs", cfg.train.max_epochs, "train");
    read_key(t, "batch_size", cfg.train.batch_size, "train");
    read_key(t, "base_lr", cfg.train.base_lr, "train");
    read_key(t, "lr_decay_factor", cfg.train.lr_decay_factor, "train");
    read_key(t, "lr_decay_every", cfg.train.lr_decay_every, "train");
    read_key(t, "patience", cfg.train.patience, "train");
    read_key(t, "min_delta", cfg.train.min_delta, "train");
    read_key(t, "deterministic", cfg.train.deterministic, "train");
  }
  if (j.contains("pipeline")) {
    const auto& p = j["pipeline"];
    detail::reject_unknown(p,
                           {"height", "width", "channels", "val_fraction", "augment",
                            "rotation_limit_deg", "zoom_limit", "flip_probability",
                            "prefetch_depth", "strict"},
                           "pipeline");
    read_key(p, "height", cfg.pipeline.height, "pipeline");
    read_key(p, "width", cfg.pipeline.width, "pipeline");
    read_key(p, "channels", cfg.pipeline.channels, "pipeline");
    read_key(p, "val_fraction", cfg.pipeline.val_fraction, "pipeline");
    read_key(p, "augment", cfg.pipeline.augment, "pipeline");
    read_key(p, "rotation_limit_deg", cfg.pipeline.rotation_limit_deg, "pipeline");
    read_key(p, "zoom_limit", cfg.pipeline.zoom_limit, "pipeline");
    read_key(p, "flip_probability", cfg.pipeline.flip_probability, "pipeline");
    read_key(p, "prefetch_depth", cfg.pipeline.prefetch_depth, "pipeline");
    read_key(p, "strict", cfg.pipeline.strict, "pipeline");
  }
  if (j.contains("arch")) {
    const auto& a = j["arch"];
    detail::reject_unknown(a, {"arch", "filters", "block_dropout", "head_dropout", "l2", "dense_width"},
                           "arch");
    read_key(a, "arch", cfg.arch.arch, "arch");
    detail::read_opt(a, "filters", cfg.arch.filters, "arch");
    detail::read_opt(a, "block_dropout", cfg.arch.block_dropout, "arch");
    detail::read_opt(a, "head_dropout", cfg.arch.head_dropout, "arch");
    detail::read_opt(a, "l2", cfg.arch.l2, "arch");
    detail::read_opt(a, "dense_width", cfg.arch.dense_width, "arch");
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::reject_unknown(p, {"data", "out", "checkpoint"}, "paths");
    read_key(p, "data", cfg.data_dir, "paths");
    read_key(p, "out", cfg.out_dir, "paths");
    read_key(p, "checkpoint", cfg.checkpoint_path, "paths");
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

/// Fully resolved form; feeding it back through apply_json reproduces `cfg`.
inline nlohmann::json to_json(const RunConfig& cfg) {
  const ArchitectureSpec a = cfg.resolve_arch(3);
  return {
      {"seed", cfg.seed},
      {"rng_generator", kRngGeneratorId},
      {"train",
       {{"max_epochs", cfg.train.max_epochs},
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"lr_decay_factor", cfg.train.lr_decay_factor},
        {"lr_decay_every", cfg.train.lr_decay_every},
        {"patience", cfg.train.patience},
        {"min_delta", cfg.train.min_delta},
        {"deterministic", cfg.train.deterministic}}},
      {"pipeline",
       {{"height", cfg.pipeline.height},
        {"width", cfg.pipeline.width},
        {"channels", cfg.pipeline.channels},
        {"val_fraction", cfg.pipeline.val_fraction},
        {"augment", cfg.pipeline.augment},
        {"rotation_limit_deg", cfg.pipeline.rotation_limit_deg},
        {"zoom_limit", cfg.pipeline.zoom_limit},
        {"flip_probability", cfg.pipeline.flip_probability},
        {"prefetch_depth", cfg.pipeline.prefetch_depth},
        {"strict", cfg.pipeline.strict}}},
      {"arch",
       {{"arch", a.arch},
        {"filters", a.filters},
        {"block_dropout", a.block_dropout},
        {"head_dropout", a.head_dropout},
        {"l2", a.l2},
        {"dense_width", a.dense_width}}},
      {"paths", {{"data", cfg.data_dir}, {"out", cfg.out_dir}, {"checkpoint", cfg.checkpoint_path}}},
  };
}

}  // namespace mic
