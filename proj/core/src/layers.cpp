#include "fmri_s4/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fmri_s4::nn {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

template <typename Real>
void fill_uniform(std::vector<Real>& v, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v) x = static_cast<Real>(dist(rng));
}

void check_channels(std::size_t got, std::size_t want, const char* where) {
  if (got != want) {
    throw ShapeMismatch(std::string(where) + ": expected " + std::to_string(want) + " input channels, got " +
                        std::to_string(got));
  }
}

// Output t reads input t + j - pad; returns the overlapping output range.
struct Tap {
  std::ptrdiff_t shift;
  std::size_t out_begin;
  std::size_t count;
};

Tap make_tap(std::size_t j, std::size_t pad, std::size_t time) {
  const auto shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(pad);
  const auto t = static_cast<std::ptrdiff_t>(time);
  const std::ptrdiff_t begin = std::max<std::ptrdiff_t>(0, -shift);
  const std::ptrdiff_t end = std::min<std::ptrdiff_t>(t, t - shift);
  return {shift, static_cast<std::size_t>(begin), end > begin ? static_cast<std::size_t>(end - begin) : 0};
}

}  // namespace

template <typename Real>
Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
}

template <typename Real>
Real gelu_derivative(Real x) {
  const Real cdf = Real(0.5) * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
  const Real pdf = std::exp(Real(-0.5) * x * x) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
  return cdf + x * pdf;
}

template float gelu(float);
template double gelu(double);
template float gelu_derivative(float);
template double gelu_derivative(double);

// ---------------------------------------------------------------- Conv1dBlock

template <typename Real>
Conv1dBlock<Real>::Conv1dBlock(const std::string& prefix, std::size_t d_in, std::size_t d_out,
                               std::size_t kernel_size)
    : weight(prefix + ".weight", {d_out, d_in, kernel_size}),
      bias(prefix + ".bias", {d_out}),
      bn_scale(prefix + ".bn_scale", {d_out}, true, Real(1)),
      bn_shift(prefix + ".bn_shift", {d_out}),
      running_mean(prefix + ".running_mean", {d_out}, false),
      running_var(prefix + ".running_var", {d_out}, false, Real(1)),
      d_in_(d_in),
      d_out_(d_out),
      k_(kernel_size) {
  if (d_in == 0 || d_out == 0 || kernel_size == 0) throw InvalidDimension("conv block dimensions must be positive");
}

template <typename Real>
void Conv1dBlock<Real>::initialize(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in_ * k_));
  fill_uniform(weight.value, bound, rng);
  fill_uniform(bias.value, bound, rng);
  std::fill(bn_scale.value.begin(), bn_scale.value.end(), Real(1));
  std::fill(bn_shift.value.begin(), bn_shift.value.end(), Real(0));
  std::fill(running_mean.value.begin(), running_mean.value.end(), Real(0));
  std::fill(running_var.value.begin(), running_var.value.end(), Real(1));
}

template <typename Real>
Tensor3<Real> Conv1dBlock<Real>::forward(const Tensor3<Real>& x, const Mask& mask, Mode mode, Cache* cache) const {
  check_channels(x.channels(), d_in_, "Conv1dBlock");
  check_mask(x, mask, "Conv1dBlock");
  const std::size_t batch = x.batch(), time = x.time(), pad = (k_ - 1) / 2;

  std::vector<RowMat<Real>> taps(k_, RowMat<Real>(d_out_, d_in_));
  for (std::size_t o = 0; o < d_out_; ++o)
    for (std::size_t i = 0; i < d_in_; ++i)
      for (std::size_t j = 0; j < k_; ++j) taps[j](o, i) = weight.value[(o * d_in_ + i) * k_ + j];

  Tensor3<Real> z(batch, d_out_, time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    ConstMatMap<Real> in(x.sample(bi).data(), d_in_, time);
    MatMap<Real> out(z.sample(bi).data(), d_out_, time);
    for (std::size_t o = 0; o < d_out_; ++o) out.row(o).setConstant(bias.value[o]);
    for (std::size_t j = 0; j < k_; ++j) {
      const Tap tap = make_tap(j, pad, time);
      if (tap.count == 0) continue;
      out.middleCols(tap.out_begin, tap.count).noalias() +=
          taps[j] * in.middleCols(static_cast<std::size_t>(tap.out_begin + tap.shift), tap.count);
    }
  }

  std::vector<Real> mean(d_out_), var(d_out_), inv_std(d_out_);
  std::size_t count = 0;
  for (std::size_t bi = 0; bi < batch; ++bi) count += mask.valid_count(bi);
  if (mode == Mode::train) {
    if (count == 0) throw EmptyMask("Conv1dBlock: batch has no valid timepoint");
    for (std::size_t o = 0; o < d_out_; ++o) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const auto row = z.series(bi, o);
        const auto valid = mask.row(bi);
        for (std::size_t t = 0; t < time; ++t) {
          if (valid[t]) s += row[t];
        }
      }
      const double mu = s / static_cast<double>(count);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const auto row = z.series(bi, o);
        const auto valid = mask.row(bi);
        for (std::size_t t = 0; t < time; ++t) {
          if (valid[t]) s2 += (row[t] - mu) * (row[t] - mu);
        }
      }
      mean[o] = static_cast<Real>(mu);
      var[o] = static_cast<Real>(s2 / static_cast<double>(count));
    }
  } else {
    mean = running_mean.value;
    var = running_var.value;
  }
  for (std::size_t o = 0; o < d_out_; ++o) inv_std[o] = Real(1) / std::sqrt(var[o] + Real(kEpsilon));

  Tensor3<Real> normalized(batch, d_out_, time);
  Tensor3<Real> y(batch, d_out_, time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const auto valid = mask.row(bi);
    for (std::size_t o = 0; o < d_out_; ++o) {
      const auto zr = z.series(bi, o);
      auto nr = normalized.series(bi, o);
      auto yr = y.series(bi, o);
      for (std::size_t t = 0; t < time; ++t) {
        if (!valid[t]) continue;
        nr[t] = (zr[t] - mean[o]) * inv_std[o];
        yr[t] = std::max(Real(0), bn_scale.value[o] * nr[t] + bn_shift.value[o]);
      }
    }
  }

  if (cache) {
    cache->mode = mode;
    cache->input = x;
    cache->normalized = std::move(normalized);
    cache->output = y;
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->inv_std = std::move(inv_std);
    cache->count = count;
  }
  return y;
}

template <typename Real>
Tensor3<Real> Conv1dBlock<Real>::backward(const Cache& cache, const Mask& mask, const Tensor3<Real>& grad_out) {
  const std::size_t batch = cache.input.batch(), time = cache.input.time(), pad = (k_ - 1) / 2;
  if (!grad_out.same_shape(cache.output)) throw ShapeMismatch("Conv1dBlock backward: gradient shape mismatch");

  // Through ReLU and the batch-norm affine.
  Tensor3<Real> g_hat(batch, d_out_, time);
  std::vector<double> sum_g(d_out_, 0.0), sum_gx(d_out_, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const auto valid = mask.row(bi);
    for (std::size_t o = 0; o < d_out_; ++o) {
      const auto go = grad_out.series(bi, o);
      const auto yo = cache.output.series(bi, o);
      const auto no = cache.normalized.series(bi, o);
      auto gh = g_hat.series(bi, o);
      double sg = 0.0, sgx = 0.0;
      for (std::size_t t = 0; t < time; ++t) {
        if (!valid[t] || !(yo[t] > Real(0))) continue;
        const Real g = go[t];
        sg += g;
        sgx += g * no[t];
        gh[t] = g * bn_scale.value[o];
      }
      bn_shift.grad[o] += static_cast<Real>(sg);
      bn_scale.grad[o] += static_cast<Real>(sgx);
      sum_g[o] += sg * bn_scale.value[o];
      sum_gx[o] += sgx * bn_scale.value[o];
    }
  }

  // Through normalization; batch statistics depend on every valid position.
  Tensor3<Real> g_z(batch, d_out_, time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const auto valid = mask.row(bi);
    for (std::size_t o = 0; o < d_out_; ++o) {
      const auto gh = g_hat.series(bi, o);
      const auto no = cache.normalized.series(bi, o);
      auto gz = g_z.series(bi, o);
      if (cache.mode == Mode::train) {
        const Real mg = static_cast<Real>(sum_g[o] / static_cast<double>(cache.count));
        const Real mgx = static_cast<Real>(sum_gx[o] / static_cast<double>(cache.count));
        for (std::size_t t = 0; t < time; ++t) {
          if (valid[t]) gz[t] = cache.inv_std[o] * (gh[t] - mg - no[t] * mgx);
        }
      } else {
        for (std::size_t t = 0; t < time; ++t) gz[t] = gh[t] * cache.inv_std[o];
      }
    }
  }

  std::vector<RowMat<Real>> taps(k_, RowMat<Real>(d_out_, d_in_));
  for (std::size_t o = 0; o < d_out_; ++o)
    for (std::size_t i = 0; i < d_in_; ++i)
      for (std::size_t j = 0; j < k_; ++j) taps[j](o, i) = weight.value[(o * d_in_ + i) * k_ + j];
  std::vector<RowMat<Real>> tap_grads(k_, RowMat<Real>::Zero(d_out_, d_in_));

  Tensor3<Real> g_x(batch, d_in_, time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    ConstMatMap<Real> in(cache.input.sample(bi).data(), d_in_, time);
    ConstMatMap<Real> gz(g_z.sample(bi).data(), d_out_, time);
    MatMap<Real> gx(g_x.sample(bi).data(), d_in_, time);
    for (std::size_t o = 0; o < d_out_; ++o) bias.grad[o] += gz.row(o).sum();
    for (std::size_t j = 0; j < k_; ++j) {
      const Tap tap = make_tap(j, pad, time);
      if (tap.count == 0) continue;
      const auto src = static_cast<std::size_t>(tap.out_begin + tap.shift);
      tap_grads[j].noalias() += gz.middleCols(tap.out_begin, tap.count) * in.middleCols(src, tap.count).transpose();
      gx.middleCols(src, tap.count).noalias() += taps[j].transpose() * gz.middleCols(tap.out_begin, tap.count);
    }
  }
  for (std::size_t o = 0; o < d_out_; ++o)
    for (std::size_t i = 0; i < d_in_; ++i)
      for (std::size_t j = 0; j < k_; ++j) weight.grad[(o * d_in_ + i) * k_ + j] += tap_grads[j](o, i);
  apply_mask(g_x, mask);
  return g_x;
}

template <typename Real>
void Conv1dBlock<Real>::commit_running_moments(const Cache& cache) {
  if (cache.mode != Mode::train) return;
  const double m = kMomentum;
  const double unbias =
      cache.count > 1 ? static_cast<double>(cache.count) / static_cast<double>(cache.count - 1) : 1.0;
  for (std::size_t o = 0; o < d_out_; ++o) {
    running_mean.value[o] = static_cast<Real>((1.0 - m) * running_mean.value[o] + m * cache.batch_mean[o]);
    running_var.value[o] =
        static_cast<Real>((1.0 - m) * running_var.value[o] + m * unbias * cache.batch_var[o]);
  }
}

template <typename Real>
void Conv1dBlock<Real>::collect(ParameterList<Real>& out) {
  out.insert(out.end(), {&weight, &bias, &bn_scale, &bn_shift, &running_mean, &running_var});
}

template <typename Real>
void Conv1dBlock<Real>::collect(ConstParameterList<Real>& out) const {
  out.insert(out.end(), {&weight, &bias, &bn_scale, &bn_shift, &running_mean, &running_var});
}

// ------------------------------------------------------------ InputProjection

template <typename Real>
InputProjection<Real>::InputProjection(const std::string& prefix, std::size_t d_in, std::size_t d_out)
    : weight(prefix + ".weight", {d_out, d_in}), bias(prefix + ".bias", {d_out}), d_in_(d_in), d_out_(d_out) {
  if (d_in == 0 || d_out == 0) throw InvalidDimension("projection dimensions must be positive");
}

template <typename Real>
void InputProjection<Real>::initialize(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in_));
  fill_uniform(weight.value, bound, rng);
  fill_uniform(bias.value, bound, rng);
}

template <typename Real>
Tensor3<Real> InputProjection<Real>::forward(const Tensor3<Real>& x, const Mask& mask, Cache* cache) const {
  check_channels(x.channels(), d_in_, "InputProjection");
  check_mask(x, mask, "InputProjection");
  Tensor3<Real> y(x.batch(), d_out_, x.time());
  ConstMatMap<Real> w(weight.value.data(), d_out_, d_in_);
  for (std::size_t bi = 0; bi < x.batch(); ++bi) {
    ConstMatMap<Real> in(x.sample(bi).data(), d_in_, x.time());
    MatMap<Real> out(y.sample(bi).data(), d_out_, x.time());
    out.noalias() = w * in;
    for (std::size_t o = 0; o < d_out_; ++o) out.row(o).array() += bias.value[o];
  }
  apply_mask(y, mask);
  if (cache) cache->input = x;
  return y;
}

template <typename Real>
Tensor3<Real> InputProjection<Real>::backward(const Cache& cache, const Mask& mask, const Tensor3<Real>& grad_out) {
  const std::size_t time = cache.input.time();
  Tensor3<Real> g = grad_out;
  apply_mask(g, mask);
  Tensor3<Real> g_x(cache.input.batch(), d_in_, time);
  ConstMatMap<Real> w(weight.value.data(), d_out_, d_in_);
  MatMap<Real> gw(weight.grad.data(), d_out_, d_in_);
  for (std::size_t bi = 0; bi < cache.input.batch(); ++bi) {
    ConstMatMap<Real> in(cache.input.sample(bi).data(), d_in_, time);
    ConstMatMap<Real> go(g.sample(bi).data(), d_out_, time);
    MatMap<Real> gx(g_x.sample(bi).data(), d_in_, time);
    gw.noalias() += go * in.transpose();
    gx.noalias() = w.transpose() * go;
    for (std::size_t o = 0; o < d_out_; ++o) bias.grad[o] += go.row(o).sum();
  }
  apply_mask(g_x, mask);
  return g_x;
}

template <typename Real>
void InputProjection<Real>::collect(ParameterList<Real>& out) {
  out.insert(out.end(), {&weight, &bias});
}

template <typename Real>
void InputProjection<Real>::collect(ConstParameterList<Real>& out) const {
  out.insert(out.end(), {&weight, &bias});
}

// ----------------------------------------------------------------- LinearHead

template <typename Real>
LinearHead<Real>::LinearHead(const std::string& prefix, std::size_t d_in, std::size_t n_classes)
    : weight(prefix + ".weight", {d_in, n_classes}),
      bias(prefix + ".bias", {n_classes}),
      d_in_(d_in),
      n_classes_(n_classes) {
  if (d_in == 0 || n_classes == 0) throw InvalidDimension("head dimensions must be positive");
}

template <typename Real>
void LinearHead<Real>::initialize(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in_));
  fill_uniform(weight.value, bound, rng);
  fill_uniform(bias.value, bound, rng);
}

template <typename Real>
DenseMatrix<Real> LinearHead<Real>::forward(const DenseMatrix<Real>& features) const {
  check_channels(features.cols(), d_in_, "LinearHead");
  DenseMatrix<Real> logits(features.rows(), n_classes_);
  ConstMatMap<Real> f(features.values().data(), features.rows(), d_in_);
  ConstMatMap<Real> w(weight.value.data(), d_in_, n_classes_);
  MatMap<Real> out(logits.values().data(), features.rows(), n_classes_);
  out.noalias() = f * w;
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (std::size_t c = 0; c < n_classes_; ++c) out(r, c) += bias.value[c];
  return logits;
}

template <typename Real>
DenseMatrix<Real> LinearHead<Real>::backward(const DenseMatrix<Real>& features, const DenseMatrix<Real>& grad_logits) {
  if (grad_logits.rows() != features.rows() || grad_logits.cols() != n_classes_) {
    throw ShapeMismatch("LinearHead backward: gradient shape mismatch");
  }
  ConstMatMap<Real> f(features.values().data(), features.rows(), d_in_);
  ConstMatMap<Real> g(grad_logits.values().data(), grad_logits.rows(), n_classes_);
  ConstMatMap<Real> w(weight.value.data(), d_in_, n_classes_);
  MatMap<Real> gw(weight.grad.data(), d_in_, n_classes_);
  gw.noalias() += f.transpose() * g;
  for (std::size_t r = 0; r < grad_logits.rows(); ++r)
    for (std::size_t c = 0; c < n_classes_; ++c) bias.grad[c] += g(r, c);
  DenseMatrix<Real> g_f(features.rows(), d_in_);
  MatMap<Real> gf(g_f.values().data(), features.rows(), d_in_);
  gf.noalias() = g * w.transpose();
  return g_f;
}

template <typename Real>
void LinearHead<Real>::collect(ParameterList<Real>& out) {
  out.insert(out.end(), {&weight, &bias});
}

template <typename Real>
void LinearHead<Real>::collect(ConstParameterList<Real>& out) const {
  out.insert(out.end(), {&weight, &bias});
}

// -------------------------------------------------------------------- pooling

template <typename Real>
DenseMatrix<Real> global_avg_pool(const Tensor3<Real>& x, const Mask& mask) {
  check_mask(x, mask, "global_avg_pool");
  DenseMatrix<Real> out(x.batch(), x.channels());
  for (std::size_t bi = 0; bi < x.batch(); ++bi) {
    const std::size_t n = mask.valid_count(bi);
    if (n == 0) throw EmptyMask("global_avg_pool: sample " + std::to_string(bi) + " has no valid timepoint");
    const auto valid = mask.row(bi);
    for (std::size_t ch = 0; ch < x.channels(); ++ch) {
      const auto s = x.series(bi, ch);
      double acc = 0.0;
      for (std::size_t t = 0; t < s.size(); ++t) {
        if (valid[t]) acc += s[t];
      }
      out(bi, ch) = static_cast<Real>(acc / static_cast<double>(n));
    }
  }
  return out;
}

template DenseMatrix<float> global_avg_pool(const Tensor3<float>&, const Mask&);
template DenseMatrix<double> global_avg_pool(const Tensor3<double>&, const Mask&);

template class Conv1dBlock<float>;
template class Conv1dBlock<double>;
template class InputProjection<float>;
template class InputProjection<double>;
template class LinearHead<float>;
template class LinearHead<double>;

}  // namespace fmri_s4::nn
