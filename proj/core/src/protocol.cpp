#include "fmri_s4/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "fmri_s4/errors.hpp"
#include "fmri_s4/seed.hpp"

namespace fmri_s4::train {

Summary Summary::of(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  return s;
}

std::string Summary::formatted() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f", 100.0 * mean, 100.0 * std);
  return buf;
}

MetricSummary MetricSummary::of(const std::vector<Metrics>& runs) {
  std::vector<double> acc, sens, spec;
  for (const auto& m : runs) {
    acc.push_back(m.accuracy);
    sens.push_back(m.sensitivity);
    spec.push_back(m.specificity);
  }
  return {Summary::of(acc), Summary::of(sens), Summary::of(spec)};
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void metric_row(std::ostream& out, const char* name, const Summary& s) {
  out << name << ',' << fixed(s.mean) << ',' << fixed(s.std) << ',' << s.formatted() << '\n';
}

// Runs task(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct RunOutcome {
  Metrics metrics;
  TrainHistory history;
};

RunOutcome fit_and_score(const nn::ModelConfig& model_cfg, const data::Dataset& train_set,
                         const data::Dataset& val_set, const data::Dataset& test_set, const TrainConfig& cfg) {
  if (cfg.precision == Precision::double_precision) {
    auto r = train<double>(model_cfg, train_set, val_set, cfg);
    return {evaluate(r.model, test_set, cfg.batch_size), std::move(r.history)};
  }
  auto r = train<float>(model_cfg, train_set, val_set, cfg);
  return {evaluate(r.model, test_set, cfg.batch_size), std::move(r.history)};
}

}  // namespace

void MetricSummary::write_csv(std::ostream& out) const {
  out << "metric,mean,std,formatted\n";
  metric_row(out, "accuracy", accuracy);
  metric_row(out, "sensitivity", sensitivity);
  metric_row(out, "specificity", specificity);
}

void CrossValidationResult::write_folds_csv(std::ostream& out) const {
  out << "fold,repeat,accuracy,sensitivity,specificity\n";
  for (const auto& f : folds) {
    out << f.fold << ',' << f.repeat << ',' << fixed(f.metrics.accuracy) << ',' << fixed(f.metrics.sensitivity)
        << ',' << fixed(f.metrics.specificity) << '\n';
  }
}

CrossValidationResult cross_validate(const data::Dataset& dataset, const CrossValidationOptions& options,
                                     const nn::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                     const FoldCallback& on_fold) {
  train_cfg.validate();
  if (options.folds < 2) throw InsufficientData("cross-validation needs at least 2 folds");
  if (options.repeats < 1) throw InsufficientData("cross-validation needs at least 1 repeat");
  if (!(options.inner_fraction > 0.0 && options.inner_fraction < 1.0)) {
    throw InvalidConfig("inner validation fraction must lie in (0, 1)");
  }
  const auto labels = dataset.labels();
  for (std::size_t c = 0; c < dataset.n_classes(); ++c) {
    if (dataset.count_label(c) < options.folds) {
      throw InsufficientData("class '" + dataset.class_names[c] + "' has " + std::to_string(dataset.count_label(c)) +
                             " samples, fewer than " + std::to_string(options.folds) + " folds");
    }
  }

  CrossValidationResult result;
  auto& assignments = result.assignments;
  for (std::size_t r = 0; r < options.repeats; ++r) {
    assignments.push_back(data::stratified_folds(labels, options.folds, derive_seed(train_cfg.seed, 100 + r)));
  }

  result.folds.resize(options.repeats * options.folds);
  std::mutex callback_mutex;
  parallel_for(result.folds.size(), options.jobs, [&](std::size_t slot) {
    const std::size_t repeat = slot / options.folds, fold = slot % options.folds;
    std::vector<std::size_t> rest, test;
    for (std::size_t i = 0; i < labels.size(); ++i) (assignments[repeat][i] == fold ? test : rest).push_back(i);
    const std::uint64_t slot_seed = derive_seed(train_cfg.seed, 1000 + slot);
    const auto [kept, inner] = data::stratified_holdout(rest, labels, options.inner_fraction, derive_seed(slot_seed, 0));
    TrainConfig cfg = train_cfg;
    cfg.seed = derive_seed(slot_seed, 1);
    auto outcome = fit_and_score(model_cfg, dataset.subset(kept), dataset.subset(inner), dataset.subset(test), cfg);

    FoldResult& out = result.folds[slot];
    out.repeat = repeat;
    out.fold = fold;
    out.metrics = outcome.metrics;
    out.best_epoch = outcome.history.best_epoch;
    out.stop_reason = outcome.history.stop_reason;
    if (on_fold) {
      std::lock_guard lock(callback_mutex);
      on_fold(out);
    }
  });

  std::vector<Metrics> all;
  for (const auto& f : result.folds) all.push_back(f.metrics);
  result.summary = MetricSummary::of(all);
  return result;
}

void SweepResult::write_runs_csv(std::ostream& out) const {
  out << "size,seed,accuracy,sensitivity,specificity\n";
  for (const auto& row : rows) {
    for (std::size_t s = 0; s < row.runs.size(); ++s) {
      out << row.size << ',' << s << ',' << fixed(row.runs[s].accuracy) << ',' << fixed(row.runs[s].sensitivity)
          << ',' << fixed(row.runs[s].specificity) << '\n';
    }
  }
}

void SweepResult::write_summary_csv(std::ostream& out) const {
  out << "size,n_seeds,accuracy_mean,accuracy_std,sensitivity_mean,sensitivity_std,specificity_mean,"
         "specificity_std,accuracy,sensitivity,specificity\n";
  for (const auto& row : rows) {
    const auto& s = row.summary;
    out << row.size << ',' << row.runs.size() << ',' << fixed(s.accuracy.mean) << ',' << fixed(s.accuracy.std) << ','
        << fixed(s.sensitivity.mean) << ',' << fixed(s.sensitivity.std) << ',' << fixed(s.specificity.mean) << ','
        << fixed(s.specificity.std) << ',' << s.accuracy.formatted() << ',' << s.sensitivity.formatted() << ','
        << s.specificity.formatted() << '\n';
  }
}

SweepResult sample_scaling_sweep(const data::Dataset& dataset, const SweepOptions& options,
                                 const nn::ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  train_cfg.validate();
  const std::size_t classes = dataset.n_classes();
  if (classes < 2) throw InsufficientData("sweep needs at least two classes");
  if (options.sizes.empty() || options.n_seeds == 0) throw InsufficientData("sweep needs sizes and seeds");
  if (options.test_size < classes) throw InsufficientData("test set must hold every class");
  const std::size_t largest = *std::max_element(options.sizes.begin(), options.sizes.end());
  const std::size_t test_per_class = options.test_size / classes;
  const std::size_t train_per_class = (largest + classes - 1) / classes;
  if (largest + options.test_size > dataset.size()) {
    throw InsufficientData("max size " + std::to_string(largest) + " plus test size " +
                           std::to_string(options.test_size) + " exceeds " + std::to_string(dataset.size()) +
                           " samples");
  }

  // Per-class pools in seeded order: the head is the test set, the tail feeds training subsets.
  std::mt19937_64 rng(derive_seed(train_cfg.seed, 200));
  std::vector<std::vector<std::size_t>> pools(classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) pools[dataset.samples[i].label].push_back(i);
  std::vector<std::size_t> test;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& pool = pools[c];
    if (pool.size() < test_per_class + train_per_class) {
      throw InsufficientData("class '" + dataset.class_names[c] + "' has " + std::to_string(pool.size()) +
                             " samples, sweep needs " + std::to_string(test_per_class + train_per_class));
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    test.insert(test.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(test_per_class));
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(test_per_class));
  }
  std::sort(test.begin(), test.end());
  const auto test_set = dataset.subset(test);

  SweepResult result;
  for (const auto& s : test_set.samples) result.test_ids.push_back(s.id);
  result.rows.resize(options.sizes.size());
  std::vector<std::vector<std::size_t>> subsets(options.sizes.size());
  for (std::size_t k = 0; k < options.sizes.size(); ++k) {
    const std::size_t size = options.sizes[k];
    if (size < 2 * classes) throw InsufficientData("training size " + std::to_string(size) + " is too small");
    std::mt19937_64 pick(derive_seed(train_cfg.seed, 300 + k));
    for (std::size_t c = 0; c < classes; ++c) {
      // Remainders go to the lowest class indices.
      const std::size_t want = size / classes + (c < size % classes ? 1 : 0);
      auto pool = pools[c];
      std::shuffle(pool.begin(), pool.end(), pick);
      subsets[k].insert(subsets[k].end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
    }
    std::sort(subsets[k].begin(), subsets[k].end());
    result.rows[k].size = size;
    result.rows[k].runs.resize(options.n_seeds);
  }

  const auto labels = dataset.labels();
  parallel_for(options.sizes.size() * options.n_seeds, options.jobs, [&](std::size_t slot) {
    const std::size_t k = slot / options.n_seeds, s = slot % options.n_seeds;
    const std::uint64_t slot_seed = derive_seed(train_cfg.seed, 2000 + slot);
    const auto [kept, inner] = data::stratified_holdout(subsets[k], labels, options.inner_fraction,
                                                        derive_seed(slot_seed, 0));
    TrainConfig cfg = train_cfg;
    cfg.seed = derive_seed(slot_seed, 1);
    result.rows[k].runs[s] =
        fit_and_score(model_cfg, dataset.subset(kept), dataset.subset(inner), test_set, cfg).metrics;
  });
  for (auto& row : result.rows) row.summary = MetricSummary::of(row.runs);
  return result;
}

}  // namespace fmri_s4::train
