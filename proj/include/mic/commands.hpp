#pragma once

// Implementations behind the `mic` executable. Each returns a process exit
// code: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mic/checkpoint.hpp"
#include "mic/data.hpp"
#include "mic/gradcheck.hpp"
#include "mic/metrics.hpp"
#include "mic/model.hpp"
#include "mic/run_config.hpp"
#include "mic/synthetic.hpp"
#include "mic/train.hpp"

namespace mic {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

/// Runs `body`, mapping exceptions to exit codes and printing them to `err`.
template <typename F>
int guarded(const char* cmd, std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    err << "mic " << cmd << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "mic " << cmd << ": invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "mic " << cmd << ": error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-synth

struct GenSynthArgs {
  std::string out;
  std::size_t per_class = 100;
  std::size_t size = 64;
  std::uint64_t seed = 42;
  std::size_t test_per_class = 0;
};

inline int cmd_gen_synth(const GenSynthArgs& a, std::ostream& out, std::ostream& err) {
  return detail::guarded("gen-synth", err, [&] {
    if (a.out.empty()) throw UsageError("--out is required");
    if (a.per_class == 0) throw UsageError("--per-class must be >= 1");
    if (a.size < 8) throw UsageError("--size must be >= 8");
    const auto s = gen_synthetic(a.out, a.per_class, a.size, a.seed, a.test_per_class);
    out << "wrote " << s.train_files << " training images";
    if (s.test_files) out << " and " << s.test_files << " test images";
    out << " (" << kSyntheticClasses.size() << " classes, " << a.size << "x" << a.size
        << ") to " << a.out << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(RunConfig cfg, std::ostream& out, std::ostream& err) {
  return detail::guarded("train", err, [&] {
    namespace fs = std::filesystem;
    if (cfg.data_dir.empty()) throw UsageError("--data is required");
    if (cfg.out_dir.empty()) throw UsageError("--out is required");
    cfg.finalize();

    const DatasetIndex index = scan_dataset_dir(cfg.data_dir);
    const ArchitectureSpec spec = cfg.resolve_arch(index.class_names.size());
    try {
      spec.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    auto [train_recs, val_recs] = split_train_val(index.train, cfg.pipeline.val_fraction, cfg.seed);

    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec || !fs::is_directory(cfg.out_dir))
      throw std::runtime_error("cannot create output directory " + cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    detail::write_text(dir / "run.json", to_json(cfg).dump(2) + "\n");

    out << "dataset: " << index.class_names.size() << " classes, " << train_recs.size()
        << " training / " << val_recs.size() << " validation images\n";
    Model<float> model = build_model<float>(spec, cfg.seed);
    out << "model: " << spec.arch << ", " << param_count(model) << " trainable parameters\n";

    const BatchLoader train_loader(std::move(train_recs), cfg.pipeline, true);
    const BatchLoader val_loader(std::move(val_recs), cfg.pipeline, false);
    Adam adam;
    const FitResult fr = fit(model, train_loader, val_loader, cfg.train, adam, [&](const HistoryRow& r) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "epoch %3d  lr %.3g  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f\n",
                    r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
      out << line << std::flush;
    });

    write_history_csv(fr.history, dir / "history.csv");
    render_curves_svg(fr.history, dir / "curves.svg");
    CheckpointMeta meta;
    meta.epoch = fr.best_epoch;
    meta.seed = cfg.seed;
    meta.class_names = index.class_names;
    meta.extra = {{"val_fraction", cfg.pipeline.val_fraction}, {"split_seed", cfg.seed}};
    const fs::path ckpt = cfg.checkpoint_path.empty() ? dir / "best.micf" : fs::path(cfg.checkpoint_path);
    save_checkpoint(model, ckpt, true, meta, adam.steps());

    out << (fr.stopped_early ? "early stop" : "finished") << " after "
        << fr.history.rows.size() << " epochs; best epoch " << fr.best_epoch << "\n";
    if (train_loader.skipped() + val_loader.skipped() + index.skipped_files > 0)
      out << "skipped " << train_loader.skipped() + val_loader.skipped() + index.skipped_files
          << " unreadable files\n";
    out << "wrote " << (dir / "history.csv").string() << ", curves.svg, run.json and " << ckpt.string()
        << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";  // train | val | test | all
  std::string arch;             // optional expectation
  std::size_t batch_size = 32;
  std::size_t prefetch = 2;
  bool json = false;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  return detail::guarded("eval", err, [&] {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (a.data.empty()) throw UsageError("--data is required");
    if (a.split != "train" && a.split != "val" && a.split != "test" && a.split != "all")
      throw UsageError("--split must be one of train, val, test, all");
    if (a.batch_size == 0) throw UsageError("--batch-size must be >= 1");

    LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    const ArchitectureSpec& spec = ck.model.spec();
    if (!a.arch.empty() && a.arch != spec.arch)
      throw CheckpointShapeError("checkpoint holds a '" + spec.arch + "' model but --arch " + a.arch +
                                 " was requested");

    const DatasetIndex index = scan_dataset_dir(a.data);
    if (!ck.meta.class_names.empty() && ck.meta.class_names != index.class_names)
      throw DatasetError("dataset classes do not match the checkpoint's classes");
    if (index.class_names.size() != spec.num_classes)
      throw DatasetError("dataset has " + std::to_string(index.class_names.size()) +
                         " classes but the model expects " + std::to_string(spec.num_classes));

    PipelineConfig pc;
    pc.height = spec.height;
    pc.width = spec.width;
    pc.channels = spec.channels;
    pc.batch_size = a.batch_size;
    pc.prefetch_depth = a.prefetch;
    pc.augment = false;
    pc.val_fraction = ck.meta.extra.value("val_fraction", pc.val_fraction);
    pc.seed = ck.meta.extra.value("split_seed", ck.meta.seed);

    std::vector<SampleRecord> records;
    if (a.split == "test") {
      if (!index.has_test)
        throw DatasetError("split 'test' requested but " +
                           (std::filesystem::path(a.data) / "test").string() +
                           " does not exist (expected test/<CLASS>/ folders)");
      records = index.test;
    } else if (a.split == "all") {
      records = index.train;
    } else {
      auto [tr, va] = split_train_val(index.train, pc.val_fraction, pc.seed);
      records = a.split == "train" ? std::move(tr) : std::move(va);
    }
    const BatchLoader loader(std::move(records), pc, false);
    const EvalResult r = evaluate(ck.model, loader);

    if (a.json) {
      nlohmann::json cm = nlohmann::json::array();
      for (std::size_t i = 0; i < r.confusion.k; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < r.confusion.k; ++j) row.push_back(r.confusion(i, j));
        cm.push_back(row);
      }
      const nlohmann::json j = {{"split", a.split},
                                {"samples", r.samples},
                                {"loss", r.loss},
                                {"data_loss", r.data_loss},
                                {"l2_penalty", r.penalty},
                                {"accuracy", r.accuracy},
                                {"accuracy_definition", "(TP+TN)/total = trace/total"},
                                {"classes", index.class_names},
                                {"confusion", cm}};
      out << j.dump(2) << "\n";
      return kExitOk;
    }
    out << "split: " << a.split << " (" << r.samples << " samples)\n";
    out << "loss: " << detail::fmt("%.6f", r.loss) << " (data " << detail::fmt("%.6f", r.data_loss)
        << " + l2 " << detail::fmt("%.6f", r.penalty) << ")\n";
    out << "accuracy: " << detail::fmt("%.6f", r.accuracy) << "\n";
    out << "note: accuracy uses the standard definition (TP+TN)/total, i.e. trace/total of the "
           "confusion matrix\n";
    out << "confusion matrix (rows = true class, columns = predicted):\n";
    std::size_t wname = 0;
    for (const auto& n : index.class_names) wname = std::max(wname, n.size());
    char buf[128];
    std::snprintf(buf, sizeof buf, "  %-*s", int(wname), "");
    out << buf;
    for (const auto& n : index.class_names) {
      std::snprintf(buf, sizeof buf, " %10s", n.c_str());
      out << buf;
    }
    out << "\n";
    for (std::size_t i = 0; i < r.confusion.k; ++i) {
      std::snprintf(buf, sizeof buf, "  %-*s", int(wname), index.class_names[i].c_str());
      out << buf;
      for (std::size_t j = 0; j < r.confusion.k; ++j) {
        std::snprintf(buf, sizeof buf, " %10llu", (unsigned long long)r.confusion(i, j));
        out << buf;
      }
      out << "\n";
    }
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  bool json = false;
};

/// decode -> resize -> rescale, then one inference pass. Returns the
/// per-class probability vector (two entries for a sigmoid head).
inline std::vector<double> predict_file(const Model<float>& model, const std::filesystem::path& p) {
  const ArchitectureSpec& spec = model.spec();
  Image img = rescale(resize_bilinear(load_image(p, spec.channels), spec.height, spec.width));
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
  const Tensor<float> probs = model.predict(img.reshaped({1, spec.height, spec.width, spec.channels}));
  if (model.sigmoid_head()) return {1.0 - double(probs[0]), double(probs[0])};
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs[i];
  return out;
}

inline int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
  return detail::guarded("predict", err, [&] {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (a.image.empty()) throw UsageError("--image is required");
    const LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
    const auto probs = predict_file(ck.model, a.image);
    const std::size_t best = std::size_t(std::max_element(probs.begin(), probs.end()) - probs.begin());
    std::vector<std::string> names = ck.meta.class_names;
    if (names.size() != probs.size()) {
      names.clear();
      for (std::size_t i = 0; i < probs.size(); ++i) names.push_back("class_" + std::to_string(i));
    }
    if (a.json) {
      const nlohmann::json j = {{"image", a.image},
                                {"class", names[best]},
                                {"class_index", best},
                                {"classes", names},
                                {"probabilities", probs}};
      out << j.dump(2) << "\n";
      return kExitOk;
    }
    out << "class: " << names[best] << "\n";
    out << "probabilities:";
    for (std::size_t i = 0; i < probs.size(); ++i)
      out << " " << names[i] << "=" << detail::fmt("%.9f", probs[i]);
    out << "\n";
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string layer;
  bool all = false;
  bool e2e = false;
  std::uint64_t seed = 7;
};

inline std::vector<std::string> gradcheck_names() {
  std::vector<std::string> out;
  for (const auto& c : layer_gradchecks()) out.push_back(c.name);
  return out;
}

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  return detail::guarded("gradcheck", err, [&] {
    if (!a.layer.empty() && a.all) throw UsageError("--layer and --all are mutually exclusive");
    std::vector<GradcheckCase> cases;
    if (!a.layer.empty()) {
      for (auto& c : layer_gradchecks(a.seed))
        if (c.name == a.layer) cases.push_back(std::move(c));
      if (cases.empty()) {
        std::string known;
        for (const auto& n : gradcheck_names()) known += " " + n;
        throw UsageError("unknown layer '" + a.layer + "'; known:" + known);
      }
    } else if (a.all || !a.e2e) {
      cases = layer_gradchecks(a.seed);
    }
    if (a.e2e) cases.push_back({"e2e_mini_ccnn", [s = a.seed] { return gradcheck_mini_ccnn(s); }});

    std::vector<std::string> failed;
    char line[128];
    std::snprintf(line, sizeof line, "%-16s %14s  %s\n", "check", "max_rel_err", "status");
    out << line;
    for (const auto& c : cases) {
      const auto t0 = std::chrono::steady_clock::now();
      double e;
      try {
        e = c.run();
      } catch (const std::exception& ex) {
        err << c.name << ": " << ex.what() << "\n";
        e = std::numeric_limits<double>::infinity();
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const bool ok = e <= kGradcheckTolerance;
      if (!ok) failed.push_back(c.name);
      std::snprintf(line, sizeof line, "%-16s %14.3e  %s  (%.2fs)\n", c.name.c_str(), e,
                    ok ? "ok" : "FAIL", secs);
      out << line;
    }
    if (!failed.empty()) {
      err << "gradcheck failed (tolerance " << kGradcheckTolerance << "):";
      for (const auto& n : failed) err << " " << n;
      err << "\n";
      return kExitFailure;
    }
    return kExitOk;
  });
}

}  // namespace mic
