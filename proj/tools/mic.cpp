// mic: train and evaluate CNN image classifiers.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mic/commands.hpp"

namespace {

std::vector<std::size_t> parse_filters(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v == 0)
      throw mic::UsageError("--filters expects a comma-separated list of positive integers, got '" +
                            s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw mic::UsageError("--filters must not be empty");
  return out;
}

struct TrainFlags {
  std::string config, data, out, arch, checkpoint, filters;
  std::optional<int> epochs, lr_decay_every, patience;
  std::optional<std::size_t> batch_size, size, channels, prefetch, dense_width;
  std::optional<double> lr, lr_decay, min_delta, val_fraction, l2, block_dropout, head_dropout;
  std::optional<std::uint64_t> seed;
  bool no_augment = false, deterministic = false, lenient = false;
};

mic::RunConfig resolve(const TrainFlags& f) {
  mic::RunConfig cfg = f.config.empty() ? mic::RunConfig{} : mic::load_run_config(f.config);
  if (!f.data.empty()) cfg.data_dir = f.data;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.checkpoint.empty()) cfg.checkpoint_path = f.checkpoint;
  if (!f.arch.empty()) cfg.arch.arch = f.arch;
  if (f.seed) cfg.seed = *f.seed;
  if (f.epochs) cfg.train.max_epochs = *f.epochs;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  if (f.lr) cfg.train.base_lr = *f.lr;
  if (f.lr_decay) cfg.train.lr_decay_factor = *f.lr_decay;
  if (f.lr_decay_every) cfg.train.lr_decay_every = *f.lr_decay_every;
  if (f.patience) cfg.train.patience = *f.patience;
  if (f.min_delta) cfg.train.min_delta = *f.min_delta;
  if (f.deterministic) cfg.train.deterministic = true;
  if (f.size) cfg.pipeline.height = cfg.pipeline.width = *f.size;
  if (f.channels) cfg.pipeline.channels = *f.channels;
  if (f.val_fraction) cfg.pipeline.val_fraction = *f.val_fraction;
  if (f.prefetch) cfg.pipeline.prefetch_depth = *f.prefetch;
  if (f.no_augment) cfg.pipeline.augment = false;
  if (f.lenient) cfg.pipeline.strict = false;
  if (!f.filters.empty()) cfg.arch.filters = parse_filters(f.filters);
  if (f.l2) cfg.arch.l2 = *f.l2;
  if (f.block_dropout) cfg.arch.block_dropout = *f.block_dropout;
  if (f.head_dropout) cfg.arch.head_dropout = *f.head_dropout;
  if (f.dense_width) cfg.arch.dense_width = *f.dense_width;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mic - CNN image classification: synthetic data, training, evaluation"};
  app.require_subcommand(1);

  mic::GenSynthArgs gs;
  auto* gen = app.add_subcommand("gen-synth", "Write a deterministic synthetic 3-class dataset");
  gen->add_option("--out", gs.out, "Output directory")->required();
  gen->add_option("--per-class", gs.per_class, "Training images per class");
  gen->add_option("--size", gs.size, "Image side length in pixels");
  gen->add_option("--seed", gs.seed, "Generator seed");
  gen->add_option("--test-per-class", gs.test_per_class, "Also write a test/ split with this many per class");

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model on a train/<CLASS>/ image tree");
  train->add_option("--data", tf.data, "Dataset root (contains train/ and optionally test/)");
  train->add_option("--arch", tf.arch, "Architecture")->check(CLI::IsMember({"ccnn", "cnn"}));
  train->add_option("--config", tf.config, "JSON run config; flags override its values");
  train->add_option("--out", tf.out, "Output directory for history.csv, curves.svg, best.micf, run.json");
  train->add_option("--checkpoint", tf.checkpoint, "Where to write the best checkpoint (default OUT/best.micf)");
  train->add_option("--epochs", tf.epochs, "Maximum epochs");
  train->add_option("--batch-size", tf.batch_size, "Batch size");
  train->add_option("--lr", tf.lr, "Base learning rate");
  train->add_option("--lr-decay", tf.lr_decay, "Step-decay factor");
  train->add_option("--lr-decay-every", tf.lr_decay_every, "Epochs between decays");
  train->add_option("--patience", tf.patience, "Early-stopping patience");
  train->add_option("--min-delta", tf.min_delta, "Minimum validation-loss improvement");
  train->add_option("--seed", tf.seed, "Seed for init, split, shuffle, augmentation, dropout");
  train->add_option("--size", tf.size, "Resize images to SIZE x SIZE");
  train->add_option("--channels", tf.channels, "Input channels (1 or 3)");
  train->add_option("--filters", tf.filters, "Comma-separated filters per block, e.g. 8,16,32,64");
  train->add_option("--val-fraction", tf.val_fraction, "Validation fraction per class");
  train->add_option("--prefetch", tf.prefetch, "Prefetch depth (0 = synchronous)");
  train->add_option("--l2", tf.l2, "L2 coefficient");
  train->add_option("--block-dropout", tf.block_dropout, "Dropout rate after each conv block");
  train->add_option("--head-dropout", tf.head_dropout, "Dropout rate in the dense head");
  train->add_option("--dense-width", tf.dense_width, "Hidden dense width");
  train->add_flag("--no-augment", tf.no_augment, "Disable training augmentation");
  train->add_flag("--skip-unreadable", tf.lenient, "Skip undecodable images instead of aborting");
  train->add_flag("--deterministic", tf.deterministic, "Require deterministic execution (always on)");

  mic::EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint: loss, accuracy, confusion matrix");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file (.micf)")->required();
  eval->add_option("--data", ea.data, "Dataset root")->required();
  eval->add_option("--split", ea.split, "train | val | test | all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--arch", ea.arch, "Expected architecture")->check(CLI::IsMember({"ccnn", "cnn"}));
  eval->add_option("--batch-size", ea.batch_size, "Batch size");
  eval->add_option("--prefetch", ea.prefetch, "Prefetch depth");
  eval->add_flag("--json", ea.json, "Machine-readable output");

  mic::PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Classify a single image");
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file (.micf)")->required();
  predict->add_option("--image", pa.image, "Image file (PNG, PGM, JPEG)")->required();
  predict->add_flag("--json", pa.json, "Machine-readable output");

  mic::GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* layer_opt = grad->add_option("--layer", ga.layer, "Check a single layer");
  auto* all_opt = grad->add_flag("--all", ga.all, "Check every layer (default)");
  layer_opt->excludes(all_opt);
  grad->add_flag("--e2e", ga.e2e, "Check the full mini-CCNN loss gradient");
  grad->add_option("--seed", ga.seed, "Seed for random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mic::kExitOk : mic::kExitUsage;
  }

  if (gen->parsed()) return mic::cmd_gen_synth(gs, std::cout, std::cerr);
  if (train->parsed()) {
    mic::RunConfig cfg;
    try {
      cfg = resolve(tf);
    } catch (const mic::UsageError& e) {
      std::cerr << "mic train: " << e.what() << "\n";
      return mic::kExitUsage;
    } catch (const mic::ConfigError& e) {
      std::cerr << "mic train: invalid configuration: " << e.what() << "\n";
      return mic::kExitUsage;
    } catch (const std::exception& e) {
      std::cerr << "mic train: error: " << e.what() << "\n";
      return mic::kExitFailure;
    }
    return mic::cmd_train(std::move(cfg), std::cout, std::cerr);
  }
  if (eval->parsed()) return mic::cmd_eval(ea, std::cout, std::cerr);
  if (predict->parsed()) return mic::cmd_predict(pa, std::cout, std::cerr);
  if (grad->parsed()) return mic::cmd_gradcheck(ga, std::cout, std::cerr);
  return mic::kExitUsage;
}
