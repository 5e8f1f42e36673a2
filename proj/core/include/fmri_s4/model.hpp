#pragma once

// Conv encoder -> S4 blocks -> temporal average pooling -> dropout -> linear head.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "fmri_s4/layers.hpp"

namespace fmri_s4::nn {

struct ModelConfig {
  std::size_t n_rois = 0;
  std::size_t d_model = 256;
  std::size_t k = 5;
  std::size_t k_conv = 1;
  std::size_t k_s4 = 2;
  std::size_t d_state = 256;  // complex modes per channel
  double dropout = 0.3;
  std::size_t n_classes = 2;
  double delta_min = 1e-3;
  double delta_max = 1e-1;

  /// Real state dimension of each S4 channel.
  std::size_t state_dim() const noexcept { return 2 * d_state; }

  /// Throws InvalidConfig naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename Real>
struct ModelCache {
  Mode mode = Mode::eval;
  Mask mask;
  std::vector<typename Conv1dBlock<Real>::Cache> conv;
  std::optional<typename InputProjection<Real>::Cache> projection;
  std::vector<typename S4Block<Real>::Cache> s4;
  DenseMatrix<Real> pooled;
  std::vector<Real> dropout_scale;  // B x d_model; empty when dropout is off
  DenseMatrix<Real> dropped;
};

template <typename Real>
class Model {
 public:
  /// Deterministic in `seed`.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }

  /// Logits, B x n_classes. Dropout draws from `dropout_seed` in train mode
  /// only. Throws ShapeMismatch when x does not have n_rois channels.
  DenseMatrix<Real> forward(const Tensor3<Real>& x, const Mask& mask, Mode mode, std::uint64_t dropout_seed = 0,
                            ModelCache<Real>* cache = nullptr) const;

  /// Accumulates dL/dparam given dL/dlogits.
  void backward(const ModelCache<Real>& cache, const DenseMatrix<Real>& grad_logits);

  void commit_running_moments(const ModelCache<Real>& cache);

  /// Keeps every S4 state matrix strictly stable after an optimizer step.
  void apply_constraints(Real max_real_lambda = Real(-1e-4));

  /// Every tensor, buffers included, in a fixed order.
  ParameterList<Real> parameters();
  ConstParameterList<Real> parameters() const;

  void zero_grad();

  std::vector<Conv1dBlock<Real>>& conv_blocks() noexcept { return conv_; }
  const std::vector<Conv1dBlock<Real>>& conv_blocks() const noexcept { return conv_; }
  std::optional<InputProjection<Real>>& projection() noexcept { return projection_; }
  const std::optional<InputProjection<Real>>& projection() const noexcept { return projection_; }
  std::vector<S4Block<Real>>& s4_blocks() noexcept { return s4_; }
  const std::vector<S4Block<Real>>& s4_blocks() const noexcept { return s4_; }
  LinearHead<Real>& head() noexcept { return head_; }
  const LinearHead<Real>& head() const noexcept { return head_; }

 private:
  ModelConfig config_;
  std::vector<Conv1dBlock<Real>> conv_;
  std::optional<InputProjection<Real>> projection_;
  std::vector<S4Block<Real>> s4_;
  LinearHead<Real> head_;
};

/// Trainable scalars; complex entries count twice, running moments not at all.
template <typename Real>
std::size_t count_parameters(const ConstParameterList<Real>& params) {
  std::size_t n = 0;
  for (const auto* param : params) {
    if (param->trainable) n += param->size();
  }
  return n;
}

template <typename Real>
std::size_t count_parameters(const Model<Real>& model) {
  return count_parameters(model.parameters());
}

/// Copies every tensor of `model` into a freshly built model of another precision.
template <typename To, typename From>
Model<To> model_cast(const Model<From>& model) {
  Model<To> out(model.config(), 0);
  const auto src = model.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t j = 0; j < src[i]->value.size(); ++j) dst[i]->value[j] = static_cast<To>(src[i]->value[j]);
  }
  return out;
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace fmri_s4::nn
