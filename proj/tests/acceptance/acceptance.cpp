// Acceptance run: one PASS/FAIL line per criterion. Pass criterion names as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fmri_s4/checkpoint.hpp"
#include "fmri_s4/data_io.hpp"
#include "fmri_s4/protocol.hpp"
#include "fmri_s4/s4_kernel.hpp"
#include "fmri_s4/ssm_core.hpp"
#include "fmri_s4/training.hpp"
#include "fmri_s4_cli/app.hpp"
#include "support/model_fixtures.hpp"
#include "support/oracles.hpp"
#include "support/random_params.hpp"

namespace {

using namespace fmri_s4;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Generators number samples from zero; distinct prefixes keep ids disjoint
// across sets, which train() requires.
data::Dataset with_id_prefix(data::Dataset ds, const std::string& prefix) {
  for (auto& sample : ds.samples) sample.id = prefix + sample.id;
  return ds;
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
};

Outcome ssm_equivalence() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> dim(1, 64), len(1, 1024);
  std::uniform_real_distribution<double> log_delta(std::log(1e-3), std::log(1.0));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = dim(rng), l = len(rng);
    const auto sys = ssm::discretize_bilinear(testing::random_continuous(m, rng), std::exp(log_delta(rng)));
    std::vector<double> u(l);
    for (auto& v : u) v = normal(rng);
    const auto expected = ssm::scan(sys, u);
    const auto got = ssm::causal_convolve<double>(ssm::unroll_kernel(sys, l).values, u, sys.d_bar);
    worst = std::max(worst, testing::max_abs_diff(got, expected));
  }
  return {worst < 1e-8, fmt("100 systems, max |scan - conv| = %.2e", worst)};
}

Outcome fast_vs_naive() {
  double worst = 0.0;
  int runs = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t state = std::size_t{4} << (seed % 5);
    const std::size_t length = std::vector<std::size_t>{16, 64, 256, 512}[(seed / 5) % 4];
    const auto single = testing::random_dplr(state / 2, rng).cast<float>();
    const auto oracle = s4::dplr_kernel_naive(single.cast<double>(), length).values;
    worst = std::max(worst, testing::max_abs_diff(s4::dplr_kernel_fast(single, length).values, oracle));
    ++runs;
  }
  return {worst < 1e-4, fmt("%d parameter sets, M 4..64, L 16..512, max diff = %.2e", runs, worst)};
}

Outcome hippo_reconstruction() {
  double worst = 0.0;
  for (std::size_t m = 2; m <= 64; m += 2) {
    const auto a = s4::hippo_legs(m);
    const auto r = s4::reconstruct_hippo(s4::nplr_decompose(m));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(a.values()[i] - r.values()[i], 2);
    worst = std::max(worst, std::sqrt(s));
  }
  return {worst < 1e-8, fmt("M = 2..64, max Frobenius error = %.2e", worst)};
}

Outcome bilinear_stability() {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  std::uniform_real_distribution<double> log_delta(std::log(1e-3), std::log(10.0));
  double worst = 0.0;
  try {
    for (int trial = 0; trial < 1000; ++trial) {
      const auto sys = ssm::discretize_bilinear(testing::random_continuous(dim(rng), rng, -5.0, -1e-3),
                                                std::exp(log_delta(rng)));
      worst = std::max(worst, testing::spectral_radius(sys.a_bar));
    }
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
  return {worst < 1.0, fmt("1000 systems, max spectral radius = %.6f", worst)};
}

Outcome gradient_fidelity() {
  const auto config = testing::tiny_config();
  nn::Model<double> model(config, 5);
  std::mt19937_64 rng(6);
  for (auto& block : model.s4_blocks()) {
    for (std::size_t h = 0; h < block.width(); ++h) {
      auto params = block.channel(h);
      const auto random = testing::random_dplr(params.modes(), rng, 1e-2, 1e-1, 0.5);
      params.lambda = random.lambda;
      params.p = random.p;
      params.b = random.b;
      block.set_channel(h, params);
    }
  }
  const std::vector<std::size_t> lengths{32, 32, 25};
  const auto x = testing::random_batch<double>(3, config.n_rois, 32, lengths, rng);
  const auto mask = nn::Mask::from_lengths(lengths, 32);
  // Eval mode: batch statistics make the first conv bias a null direction in train mode.
  const auto errors = testing::model_gradient_errors(model, x, mask, testing::random_linear_loss(3, 2, 7), 1, 1e-5,
                                                     nn::Mode::eval);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& e : errors) {
    if (e.relative > worst) {
      worst = e.relative;
      worst_name = e.name;
    }
  }
  return {worst < 1e-3, fmt("%zu tensors, worst relative error %.2e (%s)", errors.size(), worst, worst_name.c_str())};
}

// Small models for the synthetic tasks; the conv-only ablation is widened to
// match the full model's parameter count.
nn::ModelConfig small_full(std::size_t n_rois) {
  nn::ModelConfig c;
  c.n_rois = n_rois;
  c.d_model = 32;
  c.d_state = 32;
  c.k_conv = 1;
  c.k_s4 = 2;
  return c;
}

nn::ModelConfig matched_conv_only(std::size_t n_rois) {
  const std::size_t target = nn::count_parameters(nn::Model<float>(small_full(n_rois), 0));
  nn::ModelConfig best = small_full(n_rois);
  best.k_s4 = 0;
  best.k_conv = 3;
  std::size_t best_gap = SIZE_MAX;
  for (std::size_t d = 8; d <= 128; ++d) {
    auto c = best;
    c.d_model = d;
    const std::size_t n = nn::count_parameters(nn::Model<float>(c, 0));
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap < best_gap) {
      best_gap = gap;
      best.d_model = d;
    }
  }
  return best;
}

// One token channel plus one noise channel: with many pure-noise channels and
// 1000 samples both models fit the noise before the token rule.
constexpr std::size_t kLongRangeRois = 2;

Outcome ablation_direction() {
  const auto train_set = data::gen_synthetic_longrange(1000, kLongRangeRois, 400, 300, 1);
  const auto test_set = with_id_prefix(data::gen_synthetic_longrange(500, kLongRangeRois, 400, 300, 2), "test_");
  const auto val_set = with_id_prefix(data::gen_synthetic_longrange(200, kLongRangeRois, 400, 300, 3), "val_");
  train::TrainConfig tc;
  tc.lr = 3e-3;
  tc.weight_decay = 1e-5;
  tc.max_epochs = 30;
  tc.patience = 8;
  tc.batch_size = 32;
  const auto full = small_full(kLongRangeRois);
  const auto conv = matched_conv_only(kLongRangeRois);
  double acc_full = 0.0, acc_conv = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    tc.seed = seed;
    acc_full += train::evaluate(train::train<float>(full, train_set, val_set, tc).model, test_set).accuracy / 3.0;
    acc_conv += train::evaluate(train::train<float>(conv, train_set, val_set, tc).model, test_set).accuracy / 3.0;
  }
  return {acc_full >= 0.90 && acc_conv <= 0.65,
          fmt("span 300: full %.3f (need >= 0.90), K_S4=0 %.3f (need <= 0.65)", acc_full, acc_conv)};
}

Outcome sanity_trainability() {
  const auto ds = data::gen_synthetic_ssm(200, 16, 100, 8);
  train::TrainConfig tc;
  tc.lr = 3e-3;
  tc.max_epochs = 100;
  tc.patience = 10;
  std::string detail = "train accuracy per seed:";
  bool pass = true;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    tc.seed = seed;
    // Early stopping watches accuracy on the training samples themselves.
    const auto result = train::train<float>(small_full(16), ds, with_id_prefix(ds, "again_"), tc);
    const double acc = train::evaluate(result.model, ds).accuracy;
    pass = pass && acc >= 0.95;
    detail += fmt(" %.3f (epoch %zu)", acc, result.history.best_epoch);
  }
  return {pass, detail};
}

Outcome parameter_budget() {
  nn::ModelConfig config;
  config.n_rois = 118;
  config.k = 5;
  const std::size_t n = nn::count_parameters(nn::Model<float>(config, 0));
  return {n >= 1'000'000 && n <= 1'600'000, fmt("%zu trainable parameters", n)};
}

Outcome determinism() {
  ScratchDir dir("fmri_s4_acceptance_determinism");
  const auto p = [&](const char* name) { return (dir.path / name).string(); };
  std::ostringstream sink;
  if (cli::run({"synth", "--task", "ssm", "--n", "60", "--seed", "4", "--out", p("d")}, sink, sink) != 0)
    return {false, "synth failed: " + sink.str()};
  const auto xval = [&](const char* out) {
    return cli::run({"xval", "--manifest", p("d/manifest.csv"), "--folds", "3", "--repeats", "2", "--d-model", "8",
                     "--d-state", "8", "--max-epochs", "3", "--patience", "3", "--lr", "3e-3", "--out", p(out)},
                    sink, sink);
  };
  if (xval("a") != 0 || xval("b") != 0) return {false, "xval failed: " + sink.str()};
  bool ok = true;
  for (const char* f : {"folds.csv", "summary.csv"}) {
    ok = ok && slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f);
  }
  std::string detail = ok ? "xval reruns identical" : "xval reruns differ";

  nn::ModelConfig mc;
  mc.n_rois = 16;
  mc.d_model = 16;
  mc.d_state = 16;
  const nn::Model<float> model(mc, 11);
  nn::save_checkpoint(dir.path / "m.fs4c", model, {"a", "b"});
  const auto loaded = nn::load_checkpoint<float>(dir.path / "m.fs4c");
  const auto pa = model.parameters();
  const auto pb = loaded.model.parameters();
  bool same = pa.size() == pb.size();
  for (std::size_t i = 0; same && i < pa.size(); ++i) {
    same = pa[i]->size() == pb[i]->size() &&
           std::memcmp(pa[i]->value.data(), pb[i]->value.data(), pa[i]->size() * sizeof(float)) == 0;
  }
  ok = ok && same;
  detail += same ? ", checkpoint bit-exact" : ", checkpoint differs";

  const auto ds = data::gen_synthetic_longrange(6, 3, 120, 60, 9);
  data::write_dataset(ds, dir.path / "rt");
  const auto back = data::load_manifest(dir.path / "rt" / "manifest.csv");
  double worst = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.samples[i].x.values();
    const auto& b = back.samples[i].x.values();
    for (std::size_t j = 0; j < a.size(); ++j)
      worst = std::max(worst, std::abs(a[j] - b[j]) / std::max(1.0, std::abs(a[j])));
  }
  ok = ok && back.size() == ds.size() && worst <= 5e-9;
  detail += fmt(", dataset max relative error %.1e", worst);
  return {ok, detail};
}

Outcome protocol_shape() {
  const auto ds = data::gen_synthetic_ssm(60, 4, 40, 12);
  nn::ModelConfig mc;
  mc.n_rois = 4;
  mc.d_model = 4;
  mc.d_state = 4;
  mc.k = 3;
  train::TrainConfig tc;
  tc.max_epochs = 2;
  tc.patience = 2;
  train::CrossValidationOptions cv;
  cv.folds = 5;
  cv.repeats = 2;
  const auto result = train::cross_validate(ds, cv, mc, tc);
  std::ostringstream folds, summary;
  result.write_folds_csv(folds);
  result.summary.write_csv(summary);
  const auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  const std::string sum = summary.str();
  bool ok = result.folds.size() == 10 && lines(folds.str()) == 11 && lines(sum) == 4 &&
            sum.find("accuracy,") != std::string::npos && sum.find("±") != std::string::npos;
  std::string detail = fmt("%zu fold rows, %s accuracy", result.folds.size(),
                           result.summary.accuracy.formatted().c_str());

  train::SweepOptions sw;
  sw.sizes = {10, 20};
  sw.test_size = 10;
  sw.n_seeds = 3;
  const auto sweep = train::sample_scaling_sweep(ds, sw, mc, tc);
  ok = ok && sweep.rows.size() == 2;
  for (const auto& row : sweep.rows) ok = ok && row.runs.size() == 3;
  std::ostringstream rows;
  sweep.write_summary_csv(rows);
  ok = ok && lines(rows.str()) == 3;
  detail += fmt(", sweep %zu rows x %zu seeds", sweep.rows.size(), sweep.rows.empty() ? 0 : sweep.rows[0].runs.size());
  return {ok, detail};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"ssm_equivalence", ssm_equivalence},       {"fast_vs_naive", fast_vs_naive},
      {"hippo_reconstruction", hippo_reconstruction}, {"bilinear_stability", bilinear_stability},
      {"gradient_fidelity", gradient_fidelity},   {"ablation_direction", ablation_direction},
      {"sanity_trainability", sanity_trainability}, {"parameter_budget", parameter_budget},
      {"determinism", determinism},               {"protocol_shape", protocol_shape},
  };
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
