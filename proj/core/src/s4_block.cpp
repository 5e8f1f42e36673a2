#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "fmri_s4/fft.hpp"
#include "fmri_s4/layers.hpp"

namespace fmri_s4::nn {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Splits the spectrum of a + i b (a, b real) into the spectra of a and b.
template <typename Real>
void split_pair(std::complex<Real> zj, std::complex<Real> zc_conj, std::complex<Real>& first,
                std::complex<Real>& second) {
  first = Real(0.5) * (zj + zc_conj);
  const std::complex<Real> diff = Real(0.5) * (zj - zc_conj);
  second = {diff.imag(), -diff.real()};
}

}  // namespace

template <typename Real>
S4Block<Real>::S4Block(const std::string& prefix, std::size_t width, std::size_t state_dim)
    : lambda(prefix + ".lambda", {width, state_dim / 2, 2}),
      p(prefix + ".p", {width, state_dim / 2, 2}),
      b(prefix + ".b", {width, state_dim / 2, 2}),
      c(prefix + ".c", {width, state_dim / 2, 2}),
      log_delta(prefix + ".log_delta", {width}),
      d(prefix + ".d", {width}),
      norm_scale(prefix + ".norm_scale", {width}, true, Real(1)),
      norm_shift(prefix + ".norm_shift", {width}),
      mix_weight(prefix + ".mix_weight", {width, width}),
      mix_bias(prefix + ".mix_bias", {width}),
      width_(width),
      modes_(state_dim / 2) {
  if (width == 0) throw InvalidDimension("S4 block width must be positive");
  if (state_dim < 2 || state_dim % 2 != 0) {
    throw InvalidDimension("S4 state dimension must be even and positive, got " + std::to_string(state_dim));
  }
}

template <typename Real>
void S4Block<Real>::initialize(std::mt19937_64& rng, double delta_min, double delta_max) {
  const auto layer = s4::init_s4_params<Real>(width_, 2 * modes_, delta_min, delta_max, rng());
  for (std::size_t h = 0; h < width_; ++h) set_channel(h, layer.channels[h]);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : mix_weight.value) v = static_cast<Real>(dist(rng));
  for (auto& v : mix_bias.value) v = static_cast<Real>(dist(rng));
  std::fill(norm_scale.value.begin(), norm_scale.value.end(), Real(1));
  std::fill(norm_shift.value.begin(), norm_shift.value.end(), Real(0));
}

template <typename Real>
s4::DPLRParams<Real> S4Block<Real>::channel(std::size_t h) const {
  s4::DPLRParams<Real> out;
  const auto unpack = [&](const Parameter<Real>& src, std::vector<Complex>& dst) {
    dst.resize(modes_);
    const Real* base = src.value.data() + h * modes_ * 2;
    for (std::size_t m = 0; m < modes_; ++m) dst[m] = {base[2 * m], base[2 * m + 1]};
  };
  unpack(lambda, out.lambda);
  unpack(p, out.p);
  unpack(b, out.b);
  unpack(c, out.c);
  out.log_delta = log_delta.value[h];
  out.d = d.value[h];
  return out;
}

template <typename Real>
void S4Block<Real>::set_channel(std::size_t h, const s4::DPLRParams<Real>& params) {
  if (params.modes() != modes_) throw DimensionMismatch("channel has the wrong number of modes");
  const auto pack = [&](const std::vector<Complex>& src, Parameter<Real>& dst) {
    Real* base = dst.value.data() + h * modes_ * 2;
    for (std::size_t m = 0; m < modes_; ++m) {
      base[2 * m] = src[m].real();
      base[2 * m + 1] = src[m].imag();
    }
  };
  pack(params.lambda, lambda);
  pack(params.p, p);
  pack(params.b, b);
  pack(params.c, c);
  log_delta.value[h] = params.log_delta;
  d.value[h] = params.d;
}

template <typename Real>
Tensor3<Real> S4Block<Real>::forward(const Tensor3<Real>& x, const Mask& mask, Cache* cache) const {
  if (x.channels() != width_) {
    throw ShapeMismatch("S4Block: expected " + std::to_string(width_) + " channels, got " +
                        std::to_string(x.channels()));
  }
  check_mask(x, mask, "S4Block");
  const std::size_t batch = x.batch(), time = x.time(), width = width_;
  if (time == 0) throw InvalidDimension("S4Block: empty sequence");
  const std::size_t n = next_pow2(2 * time - 1);
  const std::size_t wrap = n - 1;
  const FftPlan<Real> plan(n);

  std::vector<s4::FastKernel<Real>> kernels;
  kernels.reserve(width);
  std::vector<Complex> kspec(width * n);
  for (std::size_t h = 0; h < width; ++h) {
    kernels.emplace_back(channel(h), time);
    const auto& k = kernels.back().values();
    Complex* dst = kspec.data() + h * n;
    for (std::size_t t = 0; t < time; ++t) dst[t] = k[t];
    plan.forward({dst, n});
  }

  std::vector<Complex> uspec;
  if (cache) uspec.assign(batch * width * n, Complex{});

  Tensor3<Real> y(batch, width, time);
  std::vector<Complex> work(n), prod(n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t h = 0; h < width; h += 2) {
      const bool pair = h + 1 < width;
      const auto u0 = x.series(bi, h);
      std::fill(work.begin(), work.end(), Complex{});
      for (std::size_t t = 0; t < time; ++t) work[t] = {u0[t], pair ? x(bi, h + 1, t) : Real(0)};
      plan.forward(work);
      const Complex* k0 = kspec.data() + h * n;
      const Complex* k1 = pair ? kspec.data() + (h + 1) * n : nullptr;
      Complex* s0 = cache ? uspec.data() + (bi * width + h) * n : nullptr;
      Complex* s1 = cache && pair ? uspec.data() + (bi * width + h + 1) * n : nullptr;
      for (std::size_t j = 0; j < n; ++j) {
        Complex f0, f1;
        split_pair(work[j], std::conj(work[(n - j) & wrap]), f0, f1);
        const Complex y1 = pair ? f1 * k1[j] : Complex{};
        prod[j] = f0 * k0[j] + Complex(-y1.imag(), y1.real());
        if (s0) s0[j] = f0;
        if (s1) s1[j] = f1;
      }
      plan.inverse(prod);
      auto y0 = y.series(bi, h);
      for (std::size_t t = 0; t < time; ++t) y0[t] = prod[t].real() + d.value[h] * u0[t];
      if (pair) {
        auto y1 = y.series(bi, h + 1);
        const auto u1 = x.series(bi, h + 1);
        for (std::size_t t = 0; t < time; ++t) y1[t] = prod[t].imag() + d.value[h + 1] * u1[t];
      }
    }
  }

  // GELU, then layer norm across channels at each timepoint.
  Tensor3<Real> normalized(batch, width, time);
  Tensor3<Real> norm_out(batch, width, time);
  std::vector<Real> inv_std(batch * time);
  std::vector<double> mean(time), var(time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (std::size_t h = 0; h < width; ++h) {
      auto a = normalized.series(bi, h);
      const auto yr = y.series(bi, h);
      for (std::size_t t = 0; t < time; ++t) {
        a[t] = gelu(yr[t]);
        mean[t] += a[t];
      }
    }
    for (std::size_t t = 0; t < time; ++t) mean[t] /= static_cast<double>(width);
    for (std::size_t h = 0; h < width; ++h) {
      const auto a = normalized.series(bi, h);
      for (std::size_t t = 0; t < time; ++t) var[t] += (a[t] - mean[t]) * (a[t] - mean[t]);
    }
    Real* is = inv_std.data() + bi * time;
    for (std::size_t t = 0; t < time; ++t) {
      is[t] = static_cast<Real>(1.0 / std::sqrt(var[t] / static_cast<double>(width) + kEpsilon));
    }
    for (std::size_t h = 0; h < width; ++h) {
      auto a = normalized.series(bi, h);
      auto o = norm_out.series(bi, h);
      for (std::size_t t = 0; t < time; ++t) {
        a[t] = static_cast<Real>((a[t] - mean[t]) * is[t]);
        o[t] = norm_scale.value[h] * a[t] + norm_shift.value[h];
      }
    }
  }

  Tensor3<Real> out(batch, width, time);
  Eigen::Map<const RowMat<Real>> w(mix_weight.value.data(), width, width);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    Eigen::Map<const RowMat<Real>> ln(norm_out.sample(bi).data(), width, time);
    Eigen::Map<const RowMat<Real>> in(x.sample(bi).data(), width, time);
    Eigen::Map<RowMat<Real>> o(out.sample(bi).data(), width, time);
    o.noalias() = w * ln;
    o += in;
    for (std::size_t h = 0; h < width; ++h) o.row(h).array() += mix_bias.value[h];
  }
  apply_mask(out, mask);

  if (cache) {
    cache->input = x;
    cache->kernels = std::move(kernels);
    cache->fft_size = n;
    cache->kernel_spectra = std::move(kspec);
    cache->input_spectra = std::move(uspec);
    cache->pre_activation = std::move(y);
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->norm_output = std::move(norm_out);
  }
  return out;
}

template <typename Real>
Tensor3<Real> S4Block<Real>::backward(const Cache& cache, const Mask& mask, const Tensor3<Real>& grad_out) {
  const std::size_t batch = cache.input.batch(), time = cache.input.time(), width = width_;
  const std::size_t n = cache.fft_size, wrap = n - 1;
  if (!grad_out.same_shape(cache.input)) throw ShapeMismatch("S4Block backward: gradient shape mismatch");

  Tensor3<Real> g = grad_out;
  apply_mask(g, mask);
  Tensor3<Real> g_x = g;  // residual

  // Mix and layer-norm affine.
  Tensor3<Real> g_norm(batch, width, time);
  Eigen::Map<const RowMat<Real>> w(mix_weight.value.data(), width, width);
  Eigen::Map<RowMat<Real>> gw(mix_weight.grad.data(), width, width);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    Eigen::Map<const RowMat<Real>> go(g.sample(bi).data(), width, time);
    Eigen::Map<const RowMat<Real>> ln(cache.norm_output.sample(bi).data(), width, time);
    Eigen::Map<RowMat<Real>> gn(g_norm.sample(bi).data(), width, time);
    gw.noalias() += go * ln.transpose();
    gn.noalias() = w.transpose() * go;
    for (std::size_t h = 0; h < width; ++h) mix_bias.grad[h] += go.row(h).sum();
  }

  // Layer norm and GELU back to the convolution output.
  Tensor3<Real> g_y(batch, width, time);
  std::vector<double> mg(time), mgx(time);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::fill(mg.begin(), mg.end(), 0.0);
    std::fill(mgx.begin(), mgx.end(), 0.0);
    for (std::size_t h = 0; h < width; ++h) {
      auto gn = g_norm.series(bi, h);
      const auto nh = cache.normalized.series(bi, h);
      double ss = 0.0, sh = 0.0;
      for (std::size_t t = 0; t < time; ++t) {
        ss += gn[t] * nh[t];
        sh += gn[t];
        gn[t] *= norm_scale.value[h];
        mg[t] += gn[t];
        mgx[t] += gn[t] * nh[t];
      }
      norm_scale.grad[h] += static_cast<Real>(ss);
      norm_shift.grad[h] += static_cast<Real>(sh);
    }
    const Real* is = cache.inv_std.data() + bi * time;
    for (std::size_t h = 0; h < width; ++h) {
      const auto gn = g_norm.series(bi, h);
      const auto nh = cache.normalized.series(bi, h);
      const auto yr = cache.pre_activation.series(bi, h);
      auto gy = g_y.series(bi, h);
      for (std::size_t t = 0; t < time; ++t) {
        const double ga = is[t] * (gn[t] - mg[t] / static_cast<double>(width) -
                                   nh[t] * mgx[t] / static_cast<double>(width));
        gy[t] = static_cast<Real>(ga) * gelu_derivative(yr[t]);
      }
    }
  }

  // Convolution: input and kernel gradients.
  const FftPlan<Real> plan(n);
  std::vector<Complex> kgrad_spec(width * n, Complex{});
  std::vector<Complex> work(n), prod(n);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t h = 0; h < width; h += 2) {
      const bool pair = h + 1 < width;
      const auto g0 = g_y.series(bi, h);
      std::fill(work.begin(), work.end(), Complex{});
      for (std::size_t t = 0; t < time; ++t) work[t] = {g0[t], pair ? g_y(bi, h + 1, t) : Real(0)};
      plan.forward(work);
      const Complex* k0 = cache.kernel_spectra.data() + h * n;
      const Complex* k1 = pair ? cache.kernel_spectra.data() + (h + 1) * n : nullptr;
      const Complex* u0 = cache.input_spectra.data() + (bi * width + h) * n;
      const Complex* u1 = pair ? cache.input_spectra.data() + (bi * width + h + 1) * n : nullptr;
      Complex* acc0 = kgrad_spec.data() + h * n;
      Complex* acc1 = pair ? kgrad_spec.data() + (h + 1) * n : nullptr;
      for (std::size_t j = 0; j < n; ++j) {
        Complex f0, f1;
        split_pair(work[j], std::conj(work[(n - j) & wrap]), f0, f1);
        acc0[j] += f0 * std::conj(u0[j]);
        Complex v1{};
        if (pair) {
          acc1[j] += f1 * std::conj(u1[j]);
          v1 = f1 * std::conj(k1[j]);
        }
        prod[j] = f0 * std::conj(k0[j]) + Complex(-v1.imag(), v1.real());
      }
      plan.inverse(prod);
      const auto x0 = cache.input.series(bi, h);
      auto gx0 = g_x.series(bi, h);
      double dd0 = 0.0;
      for (std::size_t t = 0; t < time; ++t) {
        gx0[t] += prod[t].real() + d.value[h] * g0[t];
        dd0 += g0[t] * x0[t];
      }
      d.grad[h] += static_cast<Real>(dd0);
      if (pair) {
        const auto g1 = g_y.series(bi, h + 1);
        const auto x1 = cache.input.series(bi, h + 1);
        auto gx1 = g_x.series(bi, h + 1);
        double dd1 = 0.0;
        for (std::size_t t = 0; t < time; ++t) {
          gx1[t] += prod[t].imag() + d.value[h + 1] * g1[t];
          dd1 += g1[t] * x1[t];
        }
        d.grad[h + 1] += static_cast<Real>(dd1);
      }
    }
  }

  std::vector<Real> grad_kernel(time);
  for (std::size_t h = 0; h < width; ++h) {
    std::span<Complex> spec(kgrad_spec.data() + h * n, n);
    plan.inverse(spec);
    for (std::size_t t = 0; t < time; ++t) grad_kernel[t] = spec[t].real();
    const auto pg = cache.kernels[h].backward(grad_kernel);
    const auto scatter = [&](const std::vector<Complex>& src, Parameter<Real>& dst) {
      Real* base = dst.grad.data() + h * modes_ * 2;
      for (std::size_t m = 0; m < modes_; ++m) {
        base[2 * m] += src[m].real();
        base[2 * m + 1] += src[m].imag();
      }
    };
    scatter(pg.lambda, lambda);
    scatter(pg.p, p);
    scatter(pg.b, b);
    scatter(pg.c, c);
    log_delta.grad[h] += pg.log_delta;
  }

  apply_mask(g_x, mask);
  return g_x;
}

template <typename Real>
void S4Block<Real>::clamp_lambda(Real max_real) {
  for (std::size_t i = 0; i < lambda.value.size(); i += 2) lambda.value[i] = std::min(lambda.value[i], max_real);
}

template <typename Real>
void S4Block<Real>::collect(ParameterList<Real>& out) {
  out.insert(out.end(), {&lambda, &p, &b, &c, &log_delta, &d, &norm_scale, &norm_shift, &mix_weight, &mix_bias});
}

template <typename Real>
void S4Block<Real>::collect(ConstParameterList<Real>& out) const {
  out.insert(out.end(), {&lambda, &p, &b, &c, &log_delta, &d, &norm_scale, &norm_shift, &mix_weight, &mix_bias});
}

template class S4Block<float>;
template class S4Block<double>;

}  // namespace fmri_s4::nn
