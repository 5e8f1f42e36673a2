#include "fmri_s4/model.hpp"

#include <random>
#include <string>

namespace fmri_s4::nn {

void ModelConfig::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidConfig(what);
  };
  require(n_rois > 0, "n_rois must be positive");
  require(d_model > 0, "d_model must be positive");
  require(k > 0, "k must be positive");
  require(d_state > 0, "d_state must be positive");
  require(n_classes > 0, "n_classes must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(k_conv + k_s4 >= 1, "K_conv + K_S4 must be at least 1");
  require(delta_min > 0.0 && delta_min <= delta_max, "need 0 < delta_min <= delta_max");
}

template <typename Real>
Model<Real>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < config_.k_conv; ++i) {
    conv_.emplace_back("conv" + std::to_string(i), i == 0 ? config_.n_rois : config_.d_model, config_.d_model,
                       config_.k);
    conv_.back().initialize(rng);
  }
  if (config_.k_conv == 0) {
    projection_.emplace("projection", config_.n_rois, config_.d_model);
    projection_->initialize(rng);
  }
  for (std::size_t i = 0; i < config_.k_s4; ++i) {
    s4_.emplace_back("s4_" + std::to_string(i), config_.d_model, config_.state_dim());
    s4_.back().initialize(rng, config_.delta_min, config_.delta_max);
  }
  head_ = LinearHead<Real>("head", config_.d_model, config_.n_classes);
  head_.initialize(rng);
}

template <typename Real>
DenseMatrix<Real> Model<Real>::forward(const Tensor3<Real>& x, const Mask& mask, Mode mode,
                                       std::uint64_t dropout_seed, ModelCache<Real>* cache) const {
  if (x.channels() != config_.n_rois) {
    throw ShapeMismatch("model expects " + std::to_string(config_.n_rois) + " ROI channels, got " +
                        std::to_string(x.channels()));
  }
  check_mask(x, mask, "Model");
  if (cache) {
    *cache = ModelCache<Real>{};
    cache->mode = mode;
    cache->mask = mask;
    cache->conv.resize(conv_.size());
    cache->s4.resize(s4_.size());
  }

  Tensor3<Real> h;
  if (projection_) {
    if (cache) cache->projection.emplace();
    h = projection_->forward(x, mask, cache ? &*cache->projection : nullptr);
  } else {
    h = x;
  }
  for (std::size_t i = 0; i < conv_.size(); ++i) h = conv_[i].forward(h, mask, mode, cache ? &cache->conv[i] : nullptr);
  for (std::size_t i = 0; i < s4_.size(); ++i) h = s4_[i].forward(h, mask, cache ? &cache->s4[i] : nullptr);

  DenseMatrix<Real> pooled = global_avg_pool(h, mask);
  DenseMatrix<Real> dropped = pooled;
  std::vector<Real> scale;
  if (mode == Mode::train && config_.dropout > 0.0) {
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - config_.dropout);
    const Real kept = static_cast<Real>(1.0 / (1.0 - config_.dropout));
    scale.resize(pooled.size());
    auto values = dropped.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      scale[i] = keep(rng) ? kept : Real(0);
      values[i] *= scale[i];
    }
  }
  DenseMatrix<Real> logits = head_.forward(dropped);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->dropout_scale = std::move(scale);
    cache->dropped = std::move(dropped);
  }
  return logits;
}

template <typename Real>
void Model<Real>::backward(const ModelCache<Real>& cache, const DenseMatrix<Real>& grad_logits) {
  DenseMatrix<Real> g_pool = head_.backward(cache.dropped, grad_logits);
  if (!cache.dropout_scale.empty()) {
    auto values = g_pool.values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] *= cache.dropout_scale[i];
  }

  const Mask& mask = cache.mask;
  const std::size_t batch = mask.batch(), time = mask.time();
  Tensor3<Real> g(batch, config_.d_model, time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const Real inv = Real(1) / static_cast<Real>(mask.valid_count(bi));
    const auto valid = mask.row(bi);
    for (std::size_t ch = 0; ch < config_.d_model; ++ch) {
      auto s = g.series(bi, ch);
      const Real v = g_pool(bi, ch) * inv;
      for (std::size_t t = 0; t < time; ++t) s[t] = valid[t] ? v : Real(0);
    }
  }
  for (std::size_t i = s4_.size(); i-- > 0;) g = s4_[i].backward(cache.s4[i], mask, g);
  for (std::size_t i = conv_.size(); i-- > 0;) g = conv_[i].backward(cache.conv[i], mask, g);
  if (projection_) projection_->backward(*cache.projection, mask, g);
}

template <typename Real>
void Model<Real>::commit_running_moments(const ModelCache<Real>& cache) {
  for (std::size_t i = 0; i < conv_.size(); ++i) conv_[i].commit_running_moments(cache.conv[i]);
}

template <typename Real>
void Model<Real>::apply_constraints(Real max_real_lambda) {
  for (auto& block : s4_) block.clamp_lambda(max_real_lambda);
}

template <typename Real>
ParameterList<Real> Model<Real>::parameters() {
  ParameterList<Real> out;
  if (projection_) projection_->collect(out);
  for (auto& block : conv_) block.collect(out);
  for (auto& block : s4_) block.collect(out);
  head_.collect(out);
  return out;
}

template <typename Real>
ConstParameterList<Real> Model<Real>::parameters() const {
  ConstParameterList<Real> out;
  if (projection_) projection_->collect(out);
  for (const auto& block : conv_) block.collect(out);
  for (const auto& block : s4_) block.collect(out);
  head_.collect(out);
  return out;
}

template <typename Real>
void Model<Real>::zero_grad() {
  for (auto* param : parameters()) param->zero_grad();
}

template class Model<float>;
template class Model<double>;

}  // namespace fmri_s4::nn
