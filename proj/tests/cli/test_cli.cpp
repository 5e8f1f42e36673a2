#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fmri_s4_cli/app.hpp"
#include "fmri_s4_cli/run_config.hpp"

namespace fmri_s4::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("fmri_s4_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string path(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
};

const std::vector<std::string> kSmallModel = {"--d-model", "4", "--d-state", "4", "--k", "3",
                                              "--max-epochs", "2", "--patience", "2"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST_F(CliTest, SynthThenXvalWritesFoldsAndSummary) {
  ASSERT_EQ(invoke({"synth", "--task", "longrange", "--n", "100", "--seed", "7", "--out", path("d")}).code, 0);
  EXPECT_TRUE(fs::exists(path("d/meta.json")));
  const auto r = invoke(concat({"xval", "--manifest", path("d/manifest.csv"), "--folds", "5", "--repeats", "1",
                                "--out", path("r")},
                               kSmallModel));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string folds = slurp(path("r/folds.csv"));
  EXPECT_EQ(std::count(folds.begin(), folds.end(), '\n'), 6);
  const std::string summary = slurp(path("r/summary.csv"));
  EXPECT_NE(summary.find("accuracy,"), std::string::npos);
  EXPECT_NE(summary.find("±"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("r/config.txt")));
}

TEST_F(CliTest, XvalRerunIsByteIdentical) {
  ASSERT_EQ(invoke({"synth", "--task", "ssm", "--n", "40", "--seed", "2", "--length", "40", "--out", path("d")}).code, 0);
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(invoke(concat({"xval", "--manifest", path("d/manifest.csv"), "--folds", "3", "--repeats", "2",
                             "--seed", "5", "--out", path(out)},
                            kSmallModel))
                  .code,
              0);
  }
  EXPECT_EQ(slurp(path("a/folds.csv")), slurp(path("b/folds.csv")));
  EXPECT_EQ(slurp(path("a/summary.csv")), slurp(path("b/summary.csv")));
}

TEST_F(CliTest, SynthRerunIsByteIdentical) {
  ASSERT_EQ(invoke({"synth", "--task", "longrange", "--n", "6", "--seed", "3", "--out", path("a")}).code, 0);
  ASSERT_EQ(invoke({"synth", "--task", "longrange", "--n", "6", "--seed", "3", "--out", path("b")}).code, 0);
  EXPECT_EQ(slurp(path("a/manifest.csv")), slurp(path("b/manifest.csv")));
  EXPECT_EQ(slurp(path("a/meta.json")), slurp(path("b/meta.json")));
  EXPECT_EQ(slurp(path("a/data/sample_0003.csv")), slurp(path("b/data/sample_0003.csv")));
}

TEST_F(CliTest, TrainThenEval) {
  ASSERT_EQ(invoke({"synth", "--task", "ssm", "--n", "40", "--seed", "1", "--length", "40", "--out", path("d")}).code, 0);
  const auto t = invoke(concat({"train", "--manifest", path("d/manifest.csv"), "--out", path("run"), "--seed", "3"},
                               kSmallModel));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(fs::exists(path("run/model.fs4c")));
  const std::string history = slurp(path("run/history.csv"));
  EXPECT_EQ(history.rfind("epoch,train_loss,train_accuracy,val_accuracy,best\n", 0), 0u);

  const auto e = invoke({"eval", "--checkpoint", path("run/model.fs4c"), "--manifest", path("d/manifest.csv")});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("accuracy"), std::string::npos);
  EXPECT_NE(e.out.find("specificity"), std::string::npos);
}

TEST_F(CliTest, EffectiveConfigReproducesRun) {
  ASSERT_EQ(invoke({"synth", "--task", "ssm", "--n", "30", "--seed", "4", "--length", "30", "--out", path("d")}).code, 0);
  ASSERT_EQ(invoke(concat({"train", "--manifest", path("d/manifest.csv"), "--out", path("first"), "--seed", "9",
                           "--lr", "0.003"},
                          kSmallModel))
                .code,
            0);
  // Same run driven only by the echoed config, with the output redirected.
  ASSERT_EQ(invoke({"train", "--config", path("first/config.txt"), "--out", path("second")}).code, 0);
  EXPECT_EQ(slurp(path("first/history.csv")), slurp(path("second/history.csv")));
  EXPECT_EQ(slurp(path("first/model.fs4c")), slurp(path("second/model.fs4c")));

  RunConfig cfg;
  cfg.merge_file(path("second/config.txt"));
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.train.lr, 0.003);
  EXPECT_EQ(cfg.model.d_model, 4u);
}

TEST_F(CliTest, KernelVerify) {
  const auto r = invoke({"kernel", "--d-state", "8", "--length", "64", "--verify"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("max |fast - naive| = ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(r.out.substr(pos + 21)), 1e-6);
}

TEST_F(CliTest, KernelCsv) {
  ASSERT_EQ(invoke({"kernel", "--d-state", "4", "--length", "16", "--delta", "0.05", "--channels", "2", "--out",
                    path("k.csv")})
                .code,
            0);
  const std::string csv = slurp(path("k.csv"));
  EXPECT_EQ(csv.rfind("t,channel_0,channel_1\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
}

TEST_F(CliTest, MissingManifestIsUsageError) {
  const auto r = invoke({"train", "--manifest", path("absent.csv"), "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(path("absent.csv")), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"synth", "--task", "nope", "--out", path("x")}).code, 2);
  EXPECT_EQ(invoke({"train", "--out", path("x")}).code, 2);  // no manifest
  EXPECT_EQ(invoke({"train", "--manifest", "m.csv", "--out", path("x"), "--lr", "fast"}).code, 2);
  EXPECT_EQ(invoke({"train", "--manifest", "m.csv", "--out", path("x"), "--precision", "half"}).code, 2);
  EXPECT_EQ(invoke({"train", "--config", path("missing.txt")}).code, 2);
  EXPECT_EQ(invoke({"synth", "--task", "longrange", "--length", "100", "--span", "90", "--out", path("x")}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, RuntimeErrorExitsOne) {
  std::ofstream(path("bad.csv")) << "id,path,label\na,missing_series.csv,0\n";
  const auto r = invoke({"eval", "--checkpoint", path("bad.csv"), "--manifest", path("bad.csv")});
  EXPECT_EQ(r.code, 1);
}

TEST(RunConfig, DefaultsAndRoundTrip) {
  RunConfig cfg;
  EXPECT_EQ(cfg.model.d_model, 256u);
  EXPECT_EQ(cfg.model.d_state, 256u);
  EXPECT_EQ(cfg.train.lr, 1e-4);
  EXPECT_EQ(cfg.train.patience, 10u);
  cfg.set("dropout", "0.25");
  cfg.set("precision", "double");
  const auto path = fs::temp_directory_path() / "fmri_s4_runconfig.txt";
  std::ofstream(path) << "# comment\n\n" << cfg.to_text();
  RunConfig back;
  back.merge_file(path);
  fs::remove(path);
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_THROW(back.set("colour", "blue"), UsageError);
}

}  // namespace
}  // namespace fmri_s4::cli
