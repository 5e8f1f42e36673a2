#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "fmri_s4/errors.hpp"
#include "fmri_s4/protocol.hpp"

namespace fmri_s4::train {
namespace {

TEST(Summary, SampleStandardDeviation) {
  const auto s = Summary::of({0.5, 0.7});
  EXPECT_DOUBLE_EQ(s.mean, 0.6);
  EXPECT_NEAR(s.std, std::sqrt(0.02), 1e-15);
  EXPECT_EQ(Summary::of({0.8}).std, 0.0);
}

TEST(Summary, PercentFormat) {
  EXPECT_EQ((Summary{0.654, 0.03}).formatted(), "65.4±3.0");
  EXPECT_EQ((Summary{1.0, 0.0}).formatted(), "100.0±0.0");
}

nn::ModelConfig tiny_model() {
  nn::ModelConfig c;
  c.d_model = 4;
  c.d_state = 4;
  c.k = 3;
  c.dropout = 0.0;
  return c;
}

TrainConfig quick(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.batch_size = 16;
  cfg.seed = seed;
  return cfg;
}

TEST(CrossValidate, EmitsOneRowPerFoldAndRepeat) {
  const auto ds = data::gen_synthetic_ssm(40, 3, 32, 1);
  CrossValidationOptions opt;
  opt.folds = 4;
  opt.repeats = 2;
  std::size_t callbacks = 0;
  const auto r = cross_validate(ds, opt, tiny_model(), quick(), [&](const FoldResult&) { ++callbacks; });
  ASSERT_EQ(r.folds.size(), 8u);
  EXPECT_EQ(callbacks, 8u);
  std::set<std::pair<std::size_t, std::size_t>> slots;
  for (const auto& f : r.folds) slots.emplace(f.repeat, f.fold);
  EXPECT_EQ(slots.size(), 8u);

  std::ostringstream folds, summary;
  r.write_folds_csv(folds);
  r.summary.write_csv(summary);
  const std::string f = folds.str();
  EXPECT_EQ(std::count(f.begin(), f.end(), '\n'), 9);
  EXPECT_EQ(f.rfind("fold,repeat,accuracy,sensitivity,specificity\n", 0), 0u);
  const std::string s = summary.str();
  EXPECT_EQ(s.rfind("metric,mean,std,formatted\n", 0), 0u);
  for (const char* metric : {"accuracy,", "sensitivity,", "specificity,"}) EXPECT_NE(s.find(metric), std::string::npos);
  EXPECT_NE(s.find("±"), std::string::npos);
}

TEST(CrossValidate, RepeatsPartitionWithDifferentAssignments) {
  const auto ds = data::gen_synthetic_ssm(100, 2, 24, 2);
  CrossValidationOptions opt;
  opt.folds = 5;
  opt.repeats = 2;
  auto cfg = quick();
  cfg.max_epochs = 1;
  cfg.patience = 1;
  const auto r = cross_validate(ds, opt, tiny_model(), cfg);
  ASSERT_EQ(r.assignments.size(), 2u);
  for (const auto& a : r.assignments) {
    ASSERT_EQ(a.size(), 100u);
    std::vector<std::size_t> size(5, 0);
    for (std::size_t f : a) ++size.at(f);
    for (std::size_t n : size) EXPECT_EQ(n, 20u);
  }
  EXPECT_NE(r.assignments[0], r.assignments[1]);
}

TEST(CrossValidate, ThreadCountDoesNotChangeResults) {
  const auto ds = data::gen_synthetic_ssm(30, 3, 32, 3);
  CrossValidationOptions opt;
  opt.folds = 3;
  opt.repeats = 1;
  const auto serial = cross_validate(ds, opt, tiny_model(), quick(5));
  opt.jobs = 3;
  const auto threaded = cross_validate(ds, opt, tiny_model(), quick(5));
  std::ostringstream a, b;
  serial.write_folds_csv(a);
  threaded.write_folds_csv(b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(CrossValidate, InsufficientData) {
  const auto ds = data::gen_synthetic_ssm(8, 2, 16, 4);
  CrossValidationOptions opt;
  opt.folds = 5;
  EXPECT_THROW(cross_validate(ds, opt, tiny_model(), quick()), InsufficientData);
  opt.folds = 1;
  EXPECT_THROW(cross_validate(ds, opt, tiny_model(), quick()), InsufficientData);
}

TEST(SampleScalingSweep, OneRowPerSizeWithThreeSeeds) {
  const auto ds = data::gen_synthetic_ssm(700, 2, 24, 5);
  SweepOptions opt;
  opt.sizes = {100};
  opt.test_size = 200;
  const auto r = sample_scaling_sweep(ds, opt, tiny_model(), quick());
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].size, 100u);
  EXPECT_EQ(r.rows[0].runs.size(), 3u);
  EXPECT_EQ(r.test_ids.size(), 200u);

  std::ostringstream runs, summary;
  r.write_runs_csv(runs);
  r.write_summary_csv(summary);
  const std::string a = runs.str(), b = summary.str();
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 4);
  EXPECT_EQ(std::count(b.begin(), b.end(), '\n'), 2);
}

TEST(SampleScalingSweep, TestSetIsFixedAndBalanced) {
  const auto ds = data::gen_synthetic_ssm(120, 2, 16, 6);
  SweepOptions opt;
  opt.test_size = 40;
  opt.n_seeds = 1;
  opt.sizes = {20};
  auto cfg = quick(9);
  cfg.max_epochs = 1;
  cfg.patience = 1;
  const auto small = sample_scaling_sweep(ds, opt, tiny_model(), cfg);
  opt.sizes = {20, 60};
  const auto both = sample_scaling_sweep(ds, opt, tiny_model(), cfg);
  EXPECT_EQ(small.test_ids, both.test_ids);
  EXPECT_EQ(both.rows.size(), 2u);
  std::size_t positives = 0;
  for (const auto& s : ds.samples)
    if (std::find(small.test_ids.begin(), small.test_ids.end(), s.id) != small.test_ids.end()) positives += s.label;
  EXPECT_EQ(positives, 20u);
}

TEST(SampleScalingSweep, InsufficientData) {
  const auto ds = data::gen_synthetic_ssm(100, 2, 16, 7);
  SweepOptions opt;
  opt.sizes = {80};
  opt.test_size = 40;
  EXPECT_THROW(sample_scaling_sweep(ds, opt, tiny_model(), quick()), InsufficientData);
}

}  // namespace
}  // namespace fmri_s4::train
