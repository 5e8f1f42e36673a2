#pragma once

// Loss, optimizer, mini-batch training with early stopping, and evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fmri_s4/data_io.hpp"
#include "fmri_s4/model.hpp"

namespace fmri_s4::train {

enum class Precision { single, double_precision };

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Precision precision = Precision::single;

  /// Throws InvalidConfig.
  void validate() const;
};

/// Confusion counts with class 1 as the positive class. A rate whose
/// denominator is zero is reported as 0.
struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;

  static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
  /// Predictions and labels are class indices; anything but 1 is negative.
  static Metrics from_predictions(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // train-mode predictions, dropout active
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::string stop_reason;  // early_stop | max_epochs | non_finite_loss

  /// epoch,train_loss,train_accuracy,val_accuracy,best
  void write_csv(std::ostream& out) const;
};

/// -log softmax(logits)[label] via log-sum-exp. When `grad` is non-empty it
/// receives softmax - onehot. Throws InvalidLabel.
template <typename Real>
double cross_entropy(std::span<const Real> logits, std::size_t label, std::span<Real> grad = {});

/// Max over coordinates of |a - n| / max(|a|, |n|, 1e-8), with n the central
/// difference (f(theta + h e_i) - f(theta - h e_i)) / 2h.
double grad_check(const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
                  std::span<const double> analytic, double h = 1e-5);

/// One AdamW update in place: decoupled decay theta -= lr wd theta, then the
/// bias-corrected Adam step (beta1 0.9, beta2 0.999, eps 1e-8). `step` is
/// 1-based. Throws ShapeMismatch.
template <typename Real>
void adamw_step(std::span<Real> params, std::span<const Real> grads, std::span<Real> m, std::span<Real> v,
                std::size_t step, const TrainConfig& cfg);

template <typename Real>
class AdamW {
 public:
  AdamW(nn::ParameterList<Real> params, const TrainConfig& cfg);

  /// Updates every trainable parameter from its accumulated gradient.
  void step();
  std::size_t steps() const noexcept { return step_; }

 private:
  nn::ParameterList<Real> params_;
  TrainConfig cfg_;
  std::vector<std::vector<Real>> m_, v_;
  std::size_t step_ = 0;
};

template <typename Real>
struct Batch {
  nn::Tensor3<Real> x;
  nn::Mask mask;
  std::vector<std::size_t> labels;
};

/// Zero-pads the chosen samples to the longest one, z-normalizing each ROI
/// timecourse over its valid timepoints.
template <typename Real>
Batch<Real> make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices);

/// Argmax per sample, ties to the lowest class index.
template <typename Real>
std::vector<std::size_t> predict(const nn::Model<Real>& model, const data::Dataset& dataset,
                                 std::size_t batch_size = 32);

/// Throws EmptyDataset.
template <typename Real>
Metrics evaluate(const nn::Model<Real>& model, const data::Dataset& dataset, std::size_t batch_size = 32);

template <typename Real>
struct TrainResult {
  nn::Model<Real> model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW with per-epoch shuffling keyed to cfg.seed, early stop on
/// validation accuracy, and the best-validation parameters restored at the
/// end. model_cfg.n_rois = 0 adopts the dataset's ROI count; n_classes is
/// taken from the training set. Throws DegenerateSplit when the sets overlap
/// or either misses a class.
template <typename Real>
TrainResult<Real> train(nn::ModelConfig model_cfg, const data::Dataset& train_set, const data::Dataset& val_set,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace fmri_s4::train
