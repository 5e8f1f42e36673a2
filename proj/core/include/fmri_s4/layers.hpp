#pragma once

// Differentiable layers. Every layer works on padded B x C x T batches with a
// B x T validity mask, exposes its tensors as Parameters and implements its
// own backward pass. forward() is const and may run concurrently; backward()
// accumulates into the Parameter gradients.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fmri_s4/parameter.hpp"
#include "fmri_s4/s4_kernel.hpp"
#include "fmri_s4/tensor.hpp"

namespace fmri_s4::nn {

/// Same-length 1D convolution -> masked batch normalization -> ReLU.
template <typename Real>
class Conv1dBlock {
 public:
  struct Cache {
    Mode mode = Mode::eval;
    Tensor3<Real> input;
    Tensor3<Real> normalized;
    Tensor3<Real> output;
    std::vector<Real> batch_mean;
    std::vector<Real> batch_var;  // biased
    std::vector<Real> inv_std;
    std::size_t count = 0;
  };

  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  Conv1dBlock() = default;
  Conv1dBlock(const std::string& prefix, std::size_t d_in, std::size_t d_out, std::size_t kernel_size);

  /// Uniform(+-1/sqrt(d_in k)) weights and bias; identity batch norm.
  void initialize(std::mt19937_64& rng);

  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t d_out() const noexcept { return d_out_; }
  std::size_t kernel_size() const noexcept { return k_; }

  /// Throws ShapeMismatch on a channel or mask mismatch, EmptyMask when a
  /// train-mode batch has no valid timepoint.
  Tensor3<Real> forward(const Tensor3<Real>& x, const Mask& mask, Mode mode, Cache* cache = nullptr) const;

  /// Returns dL/dx and accumulates parameter gradients.
  Tensor3<Real> backward(const Cache& cache, const Mask& mask, const Tensor3<Real>& grad_out);

  /// Folds a train-mode batch's statistics into the running moments.
  void commit_running_moments(const Cache& cache);

  void collect(ParameterList<Real>& out);
  void collect(ConstParameterList<Real>& out) const;

  Parameter<Real> weight;  // d_out x d_in x k
  Parameter<Real> bias;
  Parameter<Real> bn_scale;
  Parameter<Real> bn_shift;
  Parameter<Real> running_mean;  // buffer
  Parameter<Real> running_var;   // buffer

 private:
  std::size_t d_in_ = 0;
  std::size_t d_out_ = 0;
  std::size_t k_ = 0;
};

/// 1x1 channel projection used when there is no conv encoder.
template <typename Real>
class InputProjection {
 public:
  struct Cache {
    Tensor3<Real> input;
  };

  InputProjection() = default;
  InputProjection(const std::string& prefix, std::size_t d_in, std::size_t d_out);

  void initialize(std::mt19937_64& rng);

  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t d_out() const noexcept { return d_out_; }

  Tensor3<Real> forward(const Tensor3<Real>& x, const Mask& mask, Cache* cache = nullptr) const;
  Tensor3<Real> backward(const Cache& cache, const Mask& mask, const Tensor3<Real>& grad_out);

  void collect(ParameterList<Real>& out);
  void collect(ConstParameterList<Real>& out) const;

  Parameter<Real> weight;  // d_out x d_in
  Parameter<Real> bias;

 private:
  std::size_t d_in_ = 0;
  std::size_t d_out_ = 0;
};

/// H DPLR channels (causal kernel convolution plus skip) -> GELU ->
/// layer norm across channels -> position-wise linear mix -> residual.
template <typename Real>
class S4Block {
 public:
  using Complex = std::complex<Real>;

  struct Cache {
    Tensor3<Real> input;
    std::vector<s4::FastKernel<Real>> kernels;
    std::size_t fft_size = 0;
    std::vector<Complex> kernel_spectra;  // H x fft_size
    std::vector<Complex> input_spectra;   // B x H x fft_size
    Tensor3<Real> pre_activation;
    Tensor3<Real> normalized;
    std::vector<Real> inv_std;  // B x T
    Tensor3<Real> norm_output;
  };

  static constexpr double kEpsilon = 1e-5;

  S4Block() = default;
  /// `state_dim` is the real state dimension M of every channel.
  S4Block(const std::string& prefix, std::size_t width, std::size_t state_dim);

  /// HiPPO channels from `seed`; mix uniform(+-1/sqrt(H)); identity layer norm.
  void initialize(std::mt19937_64& rng, double delta_min, double delta_max);

  std::size_t width() const noexcept { return width_; }
  std::size_t modes() const noexcept { return modes_; }

  s4::DPLRParams<Real> channel(std::size_t h) const;
  void set_channel(std::size_t h, const s4::DPLRParams<Real>& params);

  Tensor3<Real> forward(const Tensor3<Real>& x, const Mask& mask, Cache* cache = nullptr) const;
  Tensor3<Real> backward(const Cache& cache, const Mask& mask, const Tensor3<Real>& grad_out);

  /// Projects Re(lambda) onto (-inf, max_real].
  void clamp_lambda(Real max_real);

  void collect(ParameterList<Real>& out);
  void collect(ConstParameterList<Real>& out) const;

  // Complex tensors are stored as trailing (re, im) pairs.
  Parameter<Real> lambda;     // H x modes x 2
  Parameter<Real> p;          // H x modes x 2
  Parameter<Real> b;          // H x modes x 2
  Parameter<Real> c;          // H x modes x 2
  Parameter<Real> log_delta;  // H
  Parameter<Real> d;          // H
  Parameter<Real> norm_scale;
  Parameter<Real> norm_shift;
  Parameter<Real> mix_weight;  // H x H, out x in
  Parameter<Real> mix_bias;

 private:
  std::size_t width_ = 0;
  std::size_t modes_ = 0;
};

/// logits = features W + bias with W of shape d_in x n_classes.
template <typename Real>
class LinearHead {
 public:
  LinearHead() = default;
  LinearHead(const std::string& prefix, std::size_t d_in, std::size_t n_classes);

  void initialize(std::mt19937_64& rng);

  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t n_classes() const noexcept { return n_classes_; }

  DenseMatrix<Real> forward(const DenseMatrix<Real>& features) const;
  DenseMatrix<Real> backward(const DenseMatrix<Real>& features, const DenseMatrix<Real>& grad_logits);

  void collect(ParameterList<Real>& out);
  void collect(ConstParameterList<Real>& out) const;

  Parameter<Real> weight;
  Parameter<Real> bias;

 private:
  std::size_t d_in_ = 0;
  std::size_t n_classes_ = 0;
};

/// Per-channel mean over valid timepoints, B x C. Throws EmptyMask when a
/// sample has no valid timepoint.
template <typename Real>
DenseMatrix<Real> global_avg_pool(const Tensor3<Real>& x, const Mask& mask);

template <typename Real>
Real gelu(Real x);
template <typename Real>
Real gelu_derivative(Real x);

extern template class Conv1dBlock<float>;
extern template class Conv1dBlock<double>;
extern template class InputProjection<float>;
extern template class InputProjection<double>;
extern template class S4Block<float>;
extern template class S4Block<double>;
extern template class LinearHead<float>;
extern template class LinearHead<double>;

}  // namespace fmri_s4::nn
