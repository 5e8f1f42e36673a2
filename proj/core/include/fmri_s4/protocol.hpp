#pragma once

// Repeated stratified k-fold evaluation and the training-set size sweep.
// Independent training runs may execute on `jobs` threads; every run draws
// its seeds from its (repeat, fold) or (size, seed) slot, so results do not
// depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fmri_s4/data_io.hpp"
#include "fmri_s4/model.hpp"
#include "fmri_s4/training.hpp"

namespace fmri_s4::train {

/// Sample mean and standard deviation (n - 1 denominator, 0 for n = 1).
struct Summary {
  double mean = 0.0;
  double std = 0.0;

  static Summary of(const std::vector<double>& values);
  /// Percent with one decimal, e.g. "65.4±3.0".
  std::string formatted() const;
};

struct MetricSummary {
  Summary accuracy, sensitivity, specificity;

  static MetricSummary of(const std::vector<Metrics>& runs);
  /// metric,mean,std,formatted
  void write_csv(std::ostream& out) const;
};

struct FoldResult {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  Metrics metrics;
  std::size_t best_epoch = 0;
  std::string stop_reason;
};

struct CrossValidationOptions {
  std::size_t folds = 5;
  std::size_t repeats = 3;
  double inner_fraction = 0.1;  // of each training split, for early stopping
  std::size_t jobs = 1;
};

struct CrossValidationResult {
  std::vector<FoldResult> folds;  // repeat-major, fold-minor
  std::vector<std::vector<std::size_t>> assignments;  // per repeat: test fold of every sample
  MetricSummary summary;

  /// fold,repeat,accuracy,sensitivity,specificity
  void write_folds_csv(std::ostream& out) const;
};

using FoldCallback = std::function<void(const FoldResult&)>;

/// Stratified folds reseeded per repeat; a stratified inner validation subset
/// of every training split drives early stopping. Throws InsufficientData
/// when folds < 2 or a class has fewer than `folds` members.
CrossValidationResult cross_validate(const data::Dataset& dataset, const CrossValidationOptions& options,
                                     const nn::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                     const FoldCallback& on_fold = {});

struct SweepOptions {
  std::vector<std::size_t> sizes;
  std::size_t test_size = 0;
  std::size_t n_seeds = 3;
  double inner_fraction = 0.1;
  std::size_t jobs = 1;
};

struct SweepRow {
  std::size_t size = 0;
  std::vector<Metrics> runs;  // one per seed
  MetricSummary summary;
};

struct SweepResult {
  std::vector<std::string> test_ids;
  std::vector<SweepRow> rows;  // one per size, input order

  /// size,seed,accuracy,sensitivity,specificity
  void write_runs_csv(std::ostream& out) const;
  /// size,n_seeds,accuracy_mean,accuracy_std,...,accuracy,sensitivity,specificity
  /// where the last three are the formatted mean±std.
  void write_summary_csv(std::ostream& out) const;
};

/// Fixed class-balanced test set; for each size a class-balanced training
/// subset drawn from the rest, trained with n_seeds initializations and
/// scored on the test set. Throws InsufficientData when the classes cannot
/// supply max(sizes) / 2 + test_size / 2 samples each.
SweepResult sample_scaling_sweep(const data::Dataset& dataset, const SweepOptions& options,
                                 const nn::ModelConfig& model_cfg, const TrainConfig& train_cfg);

}  // namespace fmri_s4::train
