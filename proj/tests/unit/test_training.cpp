#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fmri_s4/errors.hpp"
#include "fmri_s4/training.hpp"

namespace fmri_s4::train {
namespace {

TEST(CrossEntropy, UniformLogits) {
  const std::vector<double> logits{0.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(logits, 0), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, LargeLogitDoesNotOverflow) {
  const std::vector<float> logits{1000.0f, 0.0f};
  const double loss = cross_entropy<float>(logits, 0);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy<float>(logits, 1), 1000.0, 1e-9);
}

TEST(CrossEntropy, MatchesNaiveSoftmax) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(2 + trial % 5);
    for (auto& v : logits) v = normal(rng);
    const std::size_t label = trial % logits.size();
    double z = 0.0;
    for (double v : logits) z += std::exp(v);
    const double naive = -std::log(std::exp(logits[label]) / z);
    EXPECT_NEAR(cross_entropy<double>(logits, label), naive, 1e-12);
  }
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOnehot) {
  const std::vector<double> theta{0.3, -1.2, 2.0};
  std::vector<double> grad(3);
  cross_entropy<double>(theta, 2, grad);
  const auto f = [](std::span<const double> x) { return cross_entropy<double>(x, 2); };
  EXPECT_LT(grad_check(f, theta, grad), 1e-8);
}

TEST(CrossEntropy, InvalidLabel) {
  const std::vector<double> logits{0.0, 1.0};
  EXPECT_THROW(cross_entropy<double>(logits, 2), InvalidLabel);
}

TEST(GradCheck, QuadraticIsExact) {
  const std::vector<double> theta{3.0};
  const std::vector<double> analytic{6.0};
  const auto f = [](std::span<const double> x) { return x[0] * x[0]; };
  EXPECT_LT(grad_check(f, theta, analytic, 1e-5), 1e-9);
}

TEST(GradCheck, DetectsWrongGradient) {
  const std::vector<double> theta{1.0, 2.0};
  const std::vector<double> wrong{2.0, 5.0};
  const auto f = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
  EXPECT_GT(grad_check(f, theta, wrong), 0.1);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> theta{1.0, -2.0, 0.5}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  const auto before = theta;
  adamw_step<double>(theta, g, m, v, 1, cfg);
  EXPECT_EQ(theta, before);
}

TEST(AdamW, ZeroGradientDecaysMultiplicatively) {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 1e-5;
  std::vector<double> theta{1.0, -2.0, 0.5}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  const auto before = theta;
  adamw_step<double>(theta, g, m, v, 1, cfg);
  for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_DOUBLE_EQ(theta[i], before[i] * (1.0 - 1e-2 * 1e-5));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> theta{0.0}, g{1.0}, m{0.0}, v{0.0};
  adamw_step<double>(theta, g, m, v, 1, cfg);
  EXPECT_NEAR(theta[0], -cfg.lr, 1e-10);
}

TEST(AdamW, ShapeMismatch) {
  TrainConfig cfg;
  std::vector<double> theta(3), g(2), m(3), v(3);
  EXPECT_THROW(adamw_step<double>(theta, g, m, v, 1, cfg), ShapeMismatch);
}

TEST(AdamW, WithoutDecayEqualsAdam) {
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.weight_decay = 0.0;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = 64;
  std::vector<double> theta(n), m(n, 0.0), v(n, 0.0);
  for (auto& x : theta) x = normal(rng);
  auto ref = theta;
  std::vector<double> ref_m(n, 0.0), ref_v(n, 0.0);
  for (std::size_t step = 1; step <= 20; ++step) {
    std::vector<double> g(n);
    for (auto& x : g) x = normal(rng);
    adamw_step<double>(theta, g, m, v, step, cfg);
    for (std::size_t i = 0; i < n; ++i) {
      ref_m[i] = 0.9 * ref_m[i] + (1.0 - 0.9) * g[i];
      ref_v[i] = 0.999 * ref_v[i] + (1.0 - 0.999) * g[i] * g[i];
      const double m_hat = ref_m[i] / (1.0 - std::pow(0.9, static_cast<double>(step)));
      const double v_hat = ref_v[i] / (1.0 - std::pow(0.999, static_cast<double>(step)));
      ref[i] = ref[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    }
  }
  EXPECT_EQ(theta, ref);
}

TEST(AdamW, SkipsFrozenParameters) {
  nn::Parameter<double> w("w", {2}, true, 1.0), buffer("buf", {2}, false, 1.0);
  w.grad = {1.0, 1.0};
  buffer.grad = {1.0, 1.0};
  AdamW<double> opt({&w, &buffer}, TrainConfig{});
  opt.step();
  EXPECT_EQ(opt.steps(), 1u);
  EXPECT_LT(w.value[0], 1.0);
  EXPECT_EQ(buffer.value[0], 1.0);
}

TEST(Metrics, ConfusionExample) {
  const auto m = Metrics::from_counts(3, 2, 2, 1);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.625);
  EXPECT_DOUBLE_EQ(m.sensitivity, 0.75);
  EXPECT_DOUBLE_EQ(m.specificity, 0.5);
}

TEST(Metrics, PerfectPredictor) {
  const std::vector<std::size_t> labels{0, 1, 1, 0, 1};
  const auto m = Metrics::from_predictions(labels, labels);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.sensitivity, 1.0);
  EXPECT_EQ(m.specificity, 1.0);
}

TEST(Metrics, AllPositiveOnBalancedData) {
  const std::vector<std::size_t> labels{0, 1, 0, 1, 0, 1};
  const auto m = Metrics::from_predictions(std::vector<std::size_t>(6, 1), labels);
  EXPECT_EQ(m.sensitivity, 1.0);
  EXPECT_EQ(m.specificity, 0.0);
  EXPECT_EQ(m.accuracy, 0.5);
}

TEST(Metrics, IdentitiesHoldForRandomCounts) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> count(0, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t tp = count(rng), fp = count(rng), tn = count(rng), fn = count(rng);
    const auto m = Metrics::from_counts(tp, fp, tn, fn);
    const auto d = [](std::size_t x) { return static_cast<double>(x); };
    if (tp + fp + tn + fn > 0) EXPECT_EQ(m.accuracy, d(tp + tn) / d(tp + tn + fp + fn));
    if (tp + fn > 0) EXPECT_EQ(m.sensitivity, d(tp) / d(tp + fn));
    if (tn + fp > 0) EXPECT_EQ(m.specificity, d(tn) / d(tn + fp));
    EXPECT_GE(m.accuracy, 0.0);
    EXPECT_LE(m.accuracy, 1.0);
  }
  EXPECT_EQ(Metrics::from_counts(0, 0, 0, 0).accuracy, 0.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
  cfg = TrainConfig{};
  cfg.patience = cfg.max_epochs + 1;
  EXPECT_THROW(cfg.validate(), InvalidConfig);
}

TEST(MakeBatch, PadsAndNormalizes) {
  data::Dataset ds;
  ds.n_rois = 2;
  ds.class_names = {"a", "b"};
  data::Sample s0{"s0", DenseMatrix<double>(2, 4), 0};
  data::Sample s1{"s1", DenseMatrix<double>(2, 6), 1};
  for (std::size_t t = 0; t < 4; ++t) {
    s0.x(0, t) = 10.0 + t;
    s0.x(1, t) = 5.0;  // constant row stays finite
  }
  for (std::size_t t = 0; t < 6; ++t) {
    s1.x(0, t) = -3.0 * t;
    s1.x(1, t) = t % 2 ? 1.0 : -1.0;
  }
  ds.samples = {s0, s1};
  const std::vector<std::size_t> idx{0, 1};
  const auto batch = make_batch<double>(ds, idx);
  EXPECT_EQ(batch.x.time(), 6u);
  EXPECT_EQ(batch.mask.valid_count(0), 4u);
  EXPECT_EQ(batch.labels, (std::vector<std::size_t>{0, 1}));
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t n = batch.mask.valid_count(b);
    for (std::size_t c = 0; c < 2; ++c) {
      if (b == 0 && c == 1) continue;
      double mean = 0.0, sq = 0.0;
      for (std::size_t t = 0; t < n; ++t) mean += batch.x(b, c, t);
      mean /= n;
      for (std::size_t t = 0; t < n; ++t) sq += (batch.x(b, c, t) - mean) * (batch.x(b, c, t) - mean);
      EXPECT_NEAR(mean, 0.0, 1e-12);
      EXPECT_NEAR(sq / n, 1.0, 1e-12);
    }
  }
  EXPECT_EQ(batch.x(0, 1, 2), 0.0);
  EXPECT_EQ(batch.x(0, 0, 5), 0.0);
}

nn::ModelConfig small_model() {
  nn::ModelConfig c;
  c.d_model = 8;
  c.d_state = 8;
  c.k = 3;
  c.dropout = 0.1;
  return c;
}

struct Split {
  data::Dataset train, val;
};

Split ssm_split(std::size_t n, std::uint64_t seed, std::size_t length = 60) {
  const auto all = data::gen_synthetic_ssm(n, 4, length, seed);
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto [kept, held] = data::stratified_holdout(idx, all.labels(), 0.2, seed);
  return {all.subset(kept), all.subset(held)};
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto split = ssm_split(40, 3);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.batch_size = 8;
  cfg.seed = 11;
  const auto a = train<float>(small_model(), split.train, split.val, cfg);
  const auto b = train<float>(small_model(), split.train, split.val, cfg);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i) {
    EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
    EXPECT_EQ(a.history.epochs[i].val_accuracy, b.history.epochs[i].val_accuracy);
  }
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;

  cfg.seed = 12;
  const auto c = train<float>(small_model(), split.train, split.val, cfg);
  EXPECT_NE(c.history.epochs[0].train_loss, a.history.epochs[0].train_loss);
}

TEST(Train, PatienceOneStopsAtEpochTwoOnFlatValidation) {
  const auto split = ssm_split(40, 4);
  TrainConfig cfg;
  cfg.lr = 1e-30;  // parameters effectively frozen, validation accuracy constant
  cfg.max_epochs = 20;
  cfg.patience = 1;
  cfg.batch_size = 8;
  const auto r = train<float>(small_model(), split.train, split.val, cfg);
  EXPECT_EQ(r.history.epochs.size(), 2u);
  EXPECT_EQ(r.history.stop_reason, "early_stop");
  EXPECT_EQ(r.history.best_epoch, 1u);
  EXPECT_EQ(r.history.epochs[0].val_accuracy, r.history.epochs[1].val_accuracy);
}

TEST(Train, BestValidationIsMaximumAndRestored) {
  const auto split = ssm_split(60, 5);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.max_epochs = 6;
  cfg.patience = 6;
  cfg.batch_size = 8;
  const auto r = train<double>(small_model(), split.train, split.val, cfg);
  double best = 0.0;
  for (const auto& e : r.history.epochs) best = std::max(best, e.val_accuracy);
  EXPECT_EQ(r.history.best_val_accuracy, best);
  EXPECT_EQ(r.history.epochs[r.history.best_epoch - 1].val_accuracy, best);
  EXPECT_EQ(r.history.stop_reason, "max_epochs");
  EXPECT_DOUBLE_EQ(evaluate(r.model, split.val).accuracy, best);
}

TEST(Train, LossDecreasesOnSsmTask) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto split = ssm_split(200, 100 + seed, 100);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.max_epochs = 10;
    cfg.patience = 10;
    cfg.seed = seed;
    const auto r = train<float>(small_model(), split.train, split.val, cfg);
    ASSERT_EQ(r.history.epochs.size(), 10u);
    EXPECT_LT(r.history.epochs[9].train_loss, r.history.epochs[0].train_loss) << "seed " << seed;
  }
}

TEST(Train, DegenerateSplits) {
  const auto split = ssm_split(40, 6);
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.patience = 1;
  EXPECT_THROW(train<float>(small_model(), split.train, split.train, cfg), DegenerateSplit);
  EXPECT_THROW(train<float>(small_model(), split.train, data::Dataset{}, cfg), DegenerateSplit);
  std::vector<std::size_t> zeros;
  for (std::size_t i = 0; i < split.val.size(); ++i)
    if (split.val.samples[i].label == 0) zeros.push_back(i);
  EXPECT_THROW(train<float>(small_model(), split.train, split.val.subset(zeros), cfg), DegenerateSplit);
}

TEST(Evaluate, EmptyDataset) {
  nn::ModelConfig c = small_model();
  c.n_rois = 4;
  const nn::Model<float> model(c, 1);
  EXPECT_THROW(evaluate(model, data::Dataset{}), EmptyDataset);
}

TEST(TrainHistory, CsvLayout) {
  TrainHistory h;
  h.epochs = {{1, 0.5, 0.25, 0.75}, {2, 0.25, 0.5, 0.5}};
  h.best_epoch = 1;
  std::ostringstream out;
  h.write_csv(out);
  EXPECT_EQ(out.str(),
            "epoch,train_loss,train_accuracy,val_accuracy,best\n"
            "1,0.5,0.250000,0.750000,1\n"
            "2,0.25,0.500000,0.500000,0\n");
}

}  // namespace
}  // namespace fmri_s4::train
