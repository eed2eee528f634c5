// Drives the built `mic` binary end to end.

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mic/checkpoint.hpp"
#include "mic/data.hpp"
#include "mic/metrics.hpp"
#include "mic/synthetic.hpp"
#include "test_support.hpp"

using namespace mic;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli");
    gen_synthetic(dir_->path() / "data", 12, 16, 5, 3);
    gen_synthetic(dir_->path() / "notest", 12, 16, 5, 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static Result run(const std::string& args) {
    static int counter = 0;
    const fs::path o = dir_->path() / ("stdout_" + std::to_string(counter));
    const fs::path e = dir_->path() / ("stderr_" + std::to_string(counter++));
    const std::string cmd = std::string("'") + MIC_CLI_PATH + "' " + args + " >'" + o.string() +
                            "' 2>'" + e.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = test::slurp(o);
    r.err = test::slurp(e);
    return r;
  }

  static fs::path data() { return dir_->path() / "data"; }
  static std::string p(const fs::path& x) { return "'" + x.string() + "'"; }
  static fs::path out(const std::string& name) { return dir_->path() / name; }

  /// Small ccnn run on the shared dataset.
  static Result train(const std::string& name, const std::string& extra = "", int epochs = 2) {
    return run("train --data " + p(data()) + " --out " + p(out(name)) +
               " --size 16 --channels 1 --filters 4,8 --dense-width 16 --batch-size 8 --epochs " +
               std::to_string(epochs) + " " + extra);
  }

  static fs::path some_image() { return data() / "test" / "NORMAL" / "img_0000.png"; }

  static test::TempDir* dir_;
};

test::TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --epochs").code, 2);
  EXPECT_EQ(run("train --out x").code, 2);
  EXPECT_EQ(run("gen-synth --out " + p(out("g0")) + " --per-class 0").code, 2);
  EXPECT_EQ(run("train --data " + p(data()) + " --out " + p(out("bad")) + " --filters 8,x").code, 2);
  EXPECT_EQ(run("train --data " + p(data()) + " --out " + p(out("bad")) + " --arch vgg").code, 2);
  EXPECT_EQ(run("train --data " + p(data()) + " --out " + p(out("bad")) + " --lr-decay 3").code, 2);
  EXPECT_EQ(run("eval --checkpoint x").code, 2);
  EXPECT_EQ(run("gradcheck --layer nope").code, 2);
  EXPECT_EQ(run("gradcheck --layer relu --all").code, 2);
}

TEST_F(CliTest, HelpExitsZero) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen-synth"), std::string::npos);
  EXPECT_EQ(run("train --help").code, 0);
}

TEST_F(CliTest, RuntimeFailuresExitOne) {
  const auto r = run("train --data " + p(out("nowhere")) + " --out " + p(out("nw")));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("train/"), std::string::npos) << r.err;
  EXPECT_EQ(run("eval --checkpoint " + p(out("missing.micf")) + " --data " + p(data())).code, 1);
  EXPECT_EQ(run("predict --checkpoint " + p(out("missing.micf")) + " --image " + p(some_image())).code,
            1);
  const fs::path cfg = out("broken.json");
  std::ofstream(cfg) << "{\"train\": {\"max_epochs\": \"ten\"}}";
  EXPECT_EQ(run("train --config " + p(cfg) + " --data " + p(data()) + " --out " + p(out("bc"))).code, 2);
  std::ofstream(cfg, std::ios::trunc) << "{\"trian\": {}}";
  EXPECT_EQ(run("train --config " + p(cfg) + " --data " + p(data()) + " --out " + p(out("bc"))).code, 2);
}

TEST_F(CliTest, GenSynthWritesTree) {
  const auto r = run("gen-synth --out " + p(out("g1")) + " --per-class 3 --size 12 --seed 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("9 training images"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(out("g1") / "manifest.json"));
  EXPECT_EQ(scan_dataset_dir(out("g1")).train.size(), 9u);
}

TEST_F(CliTest, TrainWritesArtifactsAndCheckpointLoads) {
  const auto r = train("t1");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"history.csv", "curves.svg", "run.json", "best.micf"})
    EXPECT_TRUE(fs::exists(out("t1") / f)) << f;
  const auto h = read_history_csv(out("t1") / "history.csv");
  EXPECT_EQ(h.size(), 2u);
  const auto ck = load_checkpoint(out("t1") / "best.micf");
  EXPECT_EQ(ck.meta.class_names, kSyntheticClasses);
  EXPECT_TRUE(ck.has_optimizer);
  EXPECT_EQ(ck.model.spec().filters, (std::vector<std::size_t>{4, 8}));
}

TEST_F(CliTest, SameSeedSameBytesDifferentSeedDiffers) {
  ASSERT_EQ(train("s1", "--seed 3").code, 0);
  ASSERT_EQ(train("s2", "--seed 3").code, 0);
  ASSERT_EQ(train("s3", "--seed 4").code, 0);
  EXPECT_EQ(test::slurp(out("s1") / "history.csv"), test::slurp(out("s2") / "history.csv"));
  EXPECT_EQ(test::slurp(out("s1") / "best.micf"), test::slurp(out("s2") / "best.micf"));
  EXPECT_NE(test::slurp(out("s1") / "history.csv"), test::slurp(out("s3") / "history.csv"));
}

TEST_F(CliTest, RunJsonReproducesTheRun) {
  ASSERT_EQ(train("r1", "--seed 9 --lr 0.002").code, 0);
  const auto r = run("train --config " + p(out("r1") / "run.json") + " --out " + p(out("r2")));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(test::slurp(out("r1") / "history.csv"), test::slurp(out("r2") / "history.csv"));
  EXPECT_EQ(test::slurp(out("r1") / "best.micf"), test::slurp(out("r2") / "best.micf"));
  auto a = nlohmann::json::parse(test::slurp(out("r1") / "run.json"));
  auto b = nlohmann::json::parse(test::slurp(out("r2") / "run.json"));
  a["paths"].erase("out");
  b["paths"].erase("out");
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, CheckpointFlagChoosesPath) {
  const fs::path ck = out("elsewhere.micf");
  ASSERT_EQ(train("c1", "--checkpoint " + p(ck), 1).code, 0);
  EXPECT_TRUE(fs::exists(ck));
  EXPECT_FALSE(fs::exists(out("c1") / "best.micf"));
}

TEST_F(CliTest, ZeroLearningRateCnnPredictsLikeFreshModel) {
  const auto r = run("train --data " + p(data()) + " --out " + p(out("z1")) +
                     " --arch cnn --size 16 --channels 1 --filters 4,8 --dense-width 8 --epochs 1 "
                     "--lr 0 --seed 12");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = load_checkpoint(out("z1") / "best.micf");
  const auto fresh = build_model<float>(ck.model.spec(), 12);
  PipelineConfig pc;
  pc.height = pc.width = 16;
  pc.channels = 1;
  BatchLoader l(scan_dataset_dir(data()).test, pc, false);
  auto b = l.stream(1)->next();
  EXPECT_EQ(ck.model.predict(b->inputs), fresh.predict(b->inputs));
}

TEST_F(CliTest, ZeroLearningRateCcnnKeepsTrainableParameters) {
  ASSERT_EQ(train("z2", "--lr 0 --seed 13", 1).code, 0);
  const auto ck = load_checkpoint(out("z2") / "best.micf");
  const auto fresh = build_model<float>(ck.model.spec(), 13);
  const auto a = ck.model.params();
  const auto b = fresh.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST_F(CliTest, EvalTextAndJson) {
  ASSERT_EQ(train("e1").code, 0);
  const std::string base = "eval --checkpoint " + p(out("e1") / "best.micf") + " --data " + p(data());
  const auto t = run(base);
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("split: test (9 samples)"), std::string::npos) << t.out;
  EXPECT_NE(t.out.find("(TP+TN)"), std::string::npos);
  const auto j = run(base + " --split val --json");
  ASSERT_EQ(j.code, 0) << j.err;
  const auto doc = nlohmann::json::parse(j.out);
  for (const char* k : {"split", "samples", "loss", "data_loss", "l2_penalty", "accuracy",
                        "accuracy_definition", "classes", "confusion"})
    EXPECT_TRUE(doc.contains(k)) << k;
  EXPECT_EQ(doc["split"], "val");
  EXPECT_EQ(doc["samples"], 9);
  EXPECT_EQ(doc["confusion"].size(), 3u);
  std::uint64_t total = 0, diag = 0;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      total += doc["confusion"][a][b].get<std::uint64_t>();
      if (a == b) diag += doc["confusion"][a][b].get<std::uint64_t>();
    }
  EXPECT_EQ(total, 9u);
  EXPECT_DOUBLE_EQ(doc["accuracy"].get<double>(), double(diag) / 9.0);
  EXPECT_NEAR(doc["loss"].get<double>(),
              doc["data_loss"].get<double>() + doc["l2_penalty"].get<double>(), 1e-12);
}

TEST_F(CliTest, EvalMissingTestSplitNamesFolder) {
  ASSERT_EQ(train("e2").code, 0);
  const auto r = run("eval --checkpoint " + p(out("e2") / "best.micf") + " --data " +
                     p(dir_->path() / "notest"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("test"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalArchMismatchFails) {
  ASSERT_EQ(train("e3").code, 0);
  const auto r = run("eval --checkpoint " + p(out("e3") / "best.micf") + " --data " + p(data()) +
                     " --arch cnn");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cnn"), std::string::npos) << r.err;
}

TEST_F(CliTest, PredictIsDeterministicAndNormalized) {
  ASSERT_EQ(train("p1").code, 0);
  const std::string cmd =
      "predict --checkpoint " + p(out("p1") / "best.micf") + " --image " + p(some_image());
  const auto a = run(cmd), b = run(cmd);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.rfind("class: ", 0), 0u);
  const auto j = run(cmd + " --json");
  ASSERT_EQ(j.code, 0) << j.err;
  const auto doc = nlohmann::json::parse(j.out);
  double s = 0;
  for (const auto& v : doc["probabilities"]) s += v.get<double>();
  EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_EQ(doc["classes"].size(), 3u);
  const auto idx = doc["class_index"].get<std::size_t>();
  EXPECT_EQ(doc["class"], doc["classes"][idx]);
  EXPECT_EQ(run("predict --checkpoint " + p(out("p1") / "best.micf") + " --image " +
                p(out("p1") / "history.csv"))
                .code,
            1);
}

TEST_F(CliTest, GradcheckSingleLayerAndAll) {
  const auto one = run("gradcheck --layer relu");
  ASSERT_EQ(one.code, 0) << one.err;
  std::size_t rows = 0;
  std::istringstream in(one.out);
  for (std::string line; std::getline(in, line);)
    if (line.find(" ok") != std::string::npos) ++rows;
  EXPECT_EQ(rows, 1u) << one.out;
  const auto all = run("gradcheck --all --e2e");
  ASSERT_EQ(all.code, 0) << all.err;
  EXPECT_NE(all.out.find("e2e_mini_ccnn"), std::string::npos);
}
