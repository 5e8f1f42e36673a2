#include "fmri_s4/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <set>

#include "fmri_s4/seed.hpp"

namespace fmri_s4::train {

void TrainConfig::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidConfig(what);
  };
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(max_epochs >= 1, "max_epochs must be at least 1");
  require(patience >= 1 && patience <= max_epochs, "patience must lie in [1, max_epochs]");
  require(batch_size >= 1, "batch_size must be at least 1");
}

Metrics Metrics::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  const auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  m.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  m.sensitivity = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  return m;
}

Metrics Metrics::from_predictions(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
  if (predicted.size() != labels.size()) throw ShapeMismatch("prediction and label counts differ");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos = predicted[i] == 1, actual = labels[i] == 1;
    if (pos && actual) ++tp;
    else if (pos) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  return from_counts(tp, fp, tn, fn);
}

void TrainHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,train_accuracy,val_accuracy,best\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%.6f,%d\n", e.epoch, e.train_loss, e.train_accuracy,
                  e.val_accuracy, e.epoch == best_epoch ? 1 : 0);
    out << buf;
  }
}

template <typename Real>
double cross_entropy(std::span<const Real> logits, std::size_t label, std::span<Real> grad) {
  if (label >= logits.size()) {
    throw InvalidLabel("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                       " classes");
  }
  double max = -INFINITY;
  for (Real v : logits) max = std::max(max, static_cast<double>(v));
  double sum = 0.0;
  for (Real v : logits) sum += std::exp(static_cast<double>(v) - max);
  const double log_z = max + std::log(sum);
  if (!grad.empty()) {
    if (grad.size() != logits.size()) throw ShapeMismatch("gradient buffer size mismatch");
    for (std::size_t i = 0; i < logits.size(); ++i) {
      grad[i] = static_cast<Real>(std::exp(static_cast<double>(logits[i]) - log_z) - (i == label ? 1.0 : 0.0));
    }
  }
  return log_z - static_cast<double>(logits[label]);
}

template double cross_entropy(std::span<const float>, std::size_t, std::span<float>);
template double cross_entropy(std::span<const double>, std::size_t, std::span<double>);

double grad_check(const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
                  std::span<const double> analytic, double h) {
  if (analytic.size() != theta.size()) throw ShapeMismatch("analytic gradient size mismatch");
  std::vector<double> x(theta.begin(), theta.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

template <typename Real>
void adamw_step(std::span<Real> params, std::span<const Real> grads, std::span<Real> m, std::span<Real> v,
                std::size_t step, const TrainConfig& cfg) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeMismatch("adamw_step: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw InvalidConfig("adamw_step: step index is 1-based");
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = beta1 * m[i] + (1.0 - beta1) * g;
    const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
    m[i] = static_cast<Real>(mi);
    v[i] = static_cast<Real>(vi);
    const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
    params[i] = static_cast<Real>(decay * params[i] - update);
  }
}

template void adamw_step(std::span<float>, std::span<const float>, std::span<float>, std::span<float>, std::size_t,
                         const TrainConfig&);
template void adamw_step(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                         std::size_t, const TrainConfig&);

template <typename Real>
AdamW<Real>::AdamW(nn::ParameterList<Real> params, const TrainConfig& cfg) : cfg_(cfg) {
  for (auto* p : params) {
    if (!p->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p->size(), Real(0));
    v_.emplace_back(p->size(), Real(0));
  }
}

template <typename Real>
void AdamW<Real>::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adamw_step<Real>(params_[i]->value, params_[i]->grad, m_[i], v_[i], step_, cfg_);
  }
}

template class AdamW<float>;
template class AdamW<double>;

template <typename Real>
Batch<Real> make_batch(const data::Dataset& dataset, std::span<const std::size_t> indices) {
  std::size_t time = 0;
  for (std::size_t i : indices) time = std::max(time, dataset.samples.at(i).length());
  Batch<Real> batch;
  batch.x = nn::Tensor3<Real>(indices.size(), dataset.n_rois, time);
  std::vector<std::size_t> lengths;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& s = dataset.samples[indices[b]];
    if (s.n_rois() != dataset.n_rois) throw ShapeMismatch("sample '" + s.id + "' has the wrong ROI count");
    const std::size_t n = s.length();
    for (std::size_t r = 0; r < s.n_rois(); ++r) {
      const auto row = s.x.row(r);
      double mean = 0.0;
      for (double v : row) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : row) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(n));
      const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
      auto dst = batch.x.series(b, r);
      for (std::size_t t = 0; t < n; ++t) dst[t] = static_cast<Real>((row[t] - mean) * scale);
    }
    lengths.push_back(n);
    batch.labels.push_back(s.label);
  }
  batch.mask = nn::Mask::from_lengths(lengths, time);
  return batch;
}

template Batch<float> make_batch(const data::Dataset&, std::span<const std::size_t>);
template Batch<double> make_batch(const data::Dataset&, std::span<const std::size_t>);

namespace {

template <typename Real>
std::size_t argmax_row(const DenseMatrix<Real>& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c) {
    if (logits(r, c) > logits(r, best)) best = c;
  }
  return best;
}

}  // namespace

template <typename Real>
std::vector<std::size_t> predict(const nn::Model<Real>& model, const data::Dataset& dataset, std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = make_batch<Real>(dataset, idx);
    const auto logits = model.forward(batch.x, batch.mask, nn::Mode::eval);
    for (std::size_t r = 0; r < logits.rows(); ++r) out.push_back(argmax_row(logits, r));
  }
  return out;
}

template <typename Real>
Metrics evaluate(const nn::Model<Real>& model, const data::Dataset& dataset, std::size_t batch_size) {
  if (dataset.size() == 0) throw EmptyDataset("cannot evaluate on an empty dataset");
  return Metrics::from_predictions(predict(model, dataset, batch_size), dataset.labels());
}

template std::vector<std::size_t> predict(const nn::Model<float>&, const data::Dataset&, std::size_t);
template std::vector<std::size_t> predict(const nn::Model<double>&, const data::Dataset&, std::size_t);
template Metrics evaluate(const nn::Model<float>&, const data::Dataset&, std::size_t);
template Metrics evaluate(const nn::Model<double>&, const data::Dataset&, std::size_t);

namespace {

void check_split(const data::Dataset& train_set, const data::Dataset& val_set) {
  if (train_set.size() == 0 || val_set.size() == 0) throw DegenerateSplit("training and validation sets must be non-empty");
  if (train_set.n_rois != val_set.n_rois) throw DegenerateSplit("training and validation ROI counts differ");
  std::set<std::string> ids;
  for (const auto& s : train_set.samples) ids.insert(s.id);
  for (const auto& s : val_set.samples) {
    if (ids.count(s.id)) throw DegenerateSplit("sample '" + s.id + "' is in both training and validation sets");
  }
  std::set<std::size_t> train_classes, val_classes;
  for (const auto& s : train_set.samples) train_classes.insert(s.label);
  for (const auto& s : val_set.samples) val_classes.insert(s.label);
  if (train_classes.size() < 2) throw DegenerateSplit("training set holds a single class");
  if (train_classes != val_classes) throw DegenerateSplit("training and validation sets cover different classes");
}

}  // namespace

template <typename Real>
TrainResult<Real> train(nn::ModelConfig model_cfg, const data::Dataset& train_set, const data::Dataset& val_set,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_split(train_set, val_set);
  if (model_cfg.n_rois == 0) model_cfg.n_rois = train_set.n_rois;
  if (model_cfg.n_rois != train_set.n_rois) {
    throw InvalidConfig("model expects " + std::to_string(model_cfg.n_rois) + " ROIs, data has " +
                        std::to_string(train_set.n_rois));
  }
  model_cfg.n_classes = std::max<std::size_t>(2, train_set.n_classes());

  TrainResult<Real> result{nn::Model<Real>(model_cfg, derive_seed(cfg.seed, 0)), {}};
  nn::Model<Real>& model = result.model;
  TrainHistory& history = result.history;
  auto params = model.parameters();
  AdamW<Real> optimizer(params, cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1));

  std::vector<std::vector<Real>> best_values;
  const auto snapshot = [&] {
    best_values.clear();
    for (const auto* p : params) best_values.push_back(p->value);
  };
  snapshot();
  double best = -1.0;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  nn::ModelCache<Real> cache;
  std::vector<Real> grad_row(model_cfg.n_classes);
  history.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto batch = make_batch<Real>(train_set, idx);
      model.zero_grad();
      const auto logits = model.forward(batch.x, batch.mask, nn::Mode::train, rng(), &cache);
      DenseMatrix<Real> grad(logits.rows(), logits.cols());
      const Real inv_b = Real(1) / static_cast<Real>(idx.size());
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        loss_sum += cross_entropy<Real>(logits.row(r), batch.labels[r], grad_row);
        for (std::size_t c = 0; c < logits.cols(); ++c) grad(r, c) = grad_row[c] * inv_b;
        correct += argmax_row(logits, r) == batch.labels[r];
      }
      if (!std::isfinite(loss_sum)) {
        finite = false;
        break;
      }
      model.backward(cache, grad);
      model.commit_running_moments(cache);
      optimizer.step();
      model.apply_constraints();
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train_set.size());
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!finite) {
      history.epochs.push_back(record);
      history.stop_reason = "non_finite_loss";
      if (on_epoch) on_epoch(record);
      break;
    }
    record.val_accuracy = evaluate(model, val_set, cfg.batch_size).accuracy;
    history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    if (record.val_accuracy > best) {
      best = record.val_accuracy;
      history.best_epoch = epoch;
      history.best_val_accuracy = best;
      since_best = 0;
      snapshot();
    } else if (++since_best >= cfg.patience) {
      history.stop_reason = "early_stop";
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  return result;
}

template TrainResult<float> train(nn::ModelConfig, const data::Dataset&, const data::Dataset&, const TrainConfig&,
                                  const EpochCallback&);
template TrainResult<double> train(nn::ModelConfig, const data::Dataset&, const data::Dataset&, const TrainConfig&,
                                   const EpochCallback&);

}  // namespace fmri_s4::train
