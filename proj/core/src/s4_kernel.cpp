#include "fmri_s4/s4_kernel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "fmri_s4/errors.hpp"
#include "fmri_s4/fft.hpp"

namespace fmri_s4::s4 {

namespace {

constexpr double kPoleFloor = 1e-12;

void check_state_dim(std::size_t state_dim) {
  if (state_dim < 2 || state_dim % 2 != 0) {
    throw InvalidDimension("state dimension must be an even integer >= 2, got " +
                           std::to_string(state_dim));
  }
}

template <typename Real>
std::complex<Real> root_of_unity(std::size_t j, std::size_t n) {
  const double angle = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
  return {static_cast<Real>(std::cos(angle)), static_cast<Real>(std::sin(angle))};
}

template <typename T>
DenseMatrix<T> conj_transpose(const DenseMatrix<T>& m) {
  DenseMatrix<T> out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = std::conj(m(r, c));
  }
  return out;
}

}  // namespace

template <typename Real>
void DPLRParams<Real>::validate() const {
  const std::size_t n = lambda.size();
  if (p.size() != n || b.size() != n || c.size() != n) {
    throw DimensionMismatch("DPLR vectors must share one length (lambda " + std::to_string(n) +
                            ", p " + std::to_string(p.size()) + ", b " + std::to_string(b.size()) +
                            ", c " + std::to_string(c.size()) + ")");
  }
  if (n == 0) throw InvalidDimension("DPLR parameters need at least one mode");
}

template <typename Real>
DPLRParams<Real> DPLRParams<Real>::zeros_like() const {
  DPLRParams out;
  out.lambda.assign(lambda.size(), Complex{});
  out.p.assign(p.size(), Complex{});
  out.b.assign(b.size(), Complex{});
  out.c.assign(c.size(), Complex{});
  return out;
}

template struct DPLRParams<float>;
template struct DPLRParams<double>;

DenseMatrix<double> hippo_legs(std::size_t state_dim) {
  check_state_dim(state_dim);
  DenseMatrix<double> a(state_dim, state_dim);
  for (std::size_t n = 0; n < state_dim; ++n) {
    for (std::size_t k = 0; k < n; ++k) {
      a(n, k) = -std::sqrt(2.0 * n + 1.0) * std::sqrt(2.0 * k + 1.0);
    }
    a(n, n) = -(static_cast<double>(n) + 1.0);
  }
  return a;
}

NplrForm nplr_decompose(std::size_t state_dim) {
  check_state_dim(state_dim);
  const auto m = static_cast<Eigen::Index>(state_dim);
  const DenseMatrix<double> a = hippo_legs(state_dim);

  // A + P P^T = -1/2 I + S with S skew-symmetric; i S is Hermitian.
  Eigen::VectorXd low_rank(m), input(m);
  for (Eigen::Index n = 0; n < m; ++n) {
    low_rank(n) = std::sqrt(static_cast<double>(n) + 0.5);
    input(n) = std::sqrt(2.0 * static_cast<double>(n) + 1.0);
  }
  Eigen::MatrixXcd hermitian(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      double skew = a(r, c) + low_rank(r) * low_rank(c);
      if (r == c) skew += 0.5;
      hermitian(r, c) = std::complex<double>(0.0, skew);
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(hermitian);
  if (solver.info() != Eigen::Success) {
    throw EigenFailure("Hermitian eigen-solve of the HiPPO skew part did not converge");
  }

  // Eigenvalue mu of iS gives the mode -1/2 - i mu. Keep mu < 0 (the solver
  // sorts ascending), ordered by increasing imaginary part.
  const std::size_t half = state_dim / 2;
  NplrForm form;
  form.lambda.resize(half);
  form.p.resize(half);
  form.b.resize(half);
  form.basis = DenseMatrix<std::complex<double>>(state_dim, half);
  for (std::size_t k = 0; k < half; ++k) {
    const auto col = static_cast<Eigen::Index>(half - 1 - k);
    const double mu = solver.eigenvalues()(col);
    if (!(mu < 0.0)) throw EigenFailure("HiPPO skew part has a zero eigenvalue");
    const Eigen::VectorXcd v = solver.eigenvectors().col(col);
    form.lambda[k] = {-0.5, -mu};
    form.p[k] = v.adjoint() * low_rank.cast<std::complex<double>>();
    form.b[k] = v.adjoint() * input.cast<std::complex<double>>();
    for (std::size_t r = 0; r < state_dim; ++r) form.basis(r, k) = v(static_cast<Eigen::Index>(r));
  }
  return form;
}

DenseMatrix<std::complex<double>> reconstruct_dense(std::span<const std::complex<double>> lambda,
                                                    std::span<const std::complex<double>> p) {
  if (lambda.size() != p.size()) {
    throw DimensionMismatch("lambda and p must have equal length");
  }
  const std::size_t n = lambda.size();
  DenseMatrix<std::complex<double>> a(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) a(r, c) = -p[r] * std::conj(p[c]);
    a(r, r) += lambda[r];
  }
  return a;
}

DenseMatrix<double> reconstruct_hippo(const NplrForm& form) {
  const std::size_t half = form.lambda.size();
  const std::size_t m = 2 * half;
  if (form.p.size() != half || form.basis.rows() != m || form.basis.cols() != half) {
    throw DimensionMismatch("NPLR form has inconsistent shapes");
  }
  std::vector<std::complex<double>> lambda(m), p(m);
  DenseMatrix<std::complex<double>> basis(m, m);
  for (std::size_t k = 0; k < half; ++k) {
    lambda[k] = form.lambda[k];
    lambda[half + k] = std::conj(form.lambda[k]);
    p[k] = form.p[k];
    p[half + k] = std::conj(form.p[k]);
    for (std::size_t r = 0; r < m; ++r) {
      basis(r, k) = form.basis(r, k);
      basis(r, half + k) = std::conj(form.basis(r, k));
    }
  }
  const auto inner = reconstruct_dense(lambda, p);

  DenseMatrix<std::complex<double>> tmp(m, m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      std::complex<double> s{};
      for (std::size_t k = 0; k < m; ++k) s += basis(r, k) * inner(k, c);
      tmp(r, c) = s;
    }
  }
  DenseMatrix<double> out(m, m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      std::complex<double> s{};
      for (std::size_t k = 0; k < m; ++k) s += tmp(r, k) * std::conj(basis(c, k));
      out(r, c) = s.real();
    }
  }
  return out;
}

template <typename Real>
S4LayerParams<Real> init_s4_params(std::size_t channels, std::size_t state_dim, double delta_min,
                                   double delta_max, std::uint64_t seed) {
  if (!(delta_min > 0.0) || !(delta_min < delta_max)) {
    throw InvalidRange("need 0 < delta_min < delta_max, got [" + std::to_string(delta_min) + ", " +
                       std::to_string(delta_max) + "]");
  }
  if (channels == 0) throw InvalidDimension("an S4 layer needs at least one channel");
  const NplrForm form = nplr_decompose(state_dim);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> complex_part(0.0, std::sqrt(0.5));
  std::normal_distribution<double> standard(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double log_min = std::log(delta_min);
  const double log_max = std::log(delta_max);

  S4LayerParams<double> layer;
  layer.channels.reserve(channels);
  for (std::size_t h = 0; h < channels; ++h) {
    DPLRParams<double> ch;
    ch.lambda = form.lambda;
    ch.p = form.p;
    ch.b = form.b;
    ch.c.resize(form.lambda.size());
    for (auto& v : ch.c) {
      const double re = complex_part(rng);
      const double im = complex_part(rng);
      v = {re, im};
    }
    ch.log_delta = std::clamp(log_min + unit(rng) * (log_max - log_min), log_min, log_max);
    ch.d = standard(rng);
    layer.channels.push_back(std::move(ch));
  }
  if constexpr (std::is_same_v<Real, double>) {
    return layer;
  } else {
    S4LayerParams<Real> out;
    out.channels.reserve(channels);
    for (const auto& ch : layer.channels) out.channels.push_back(ch.template cast<Real>());
    return out;
  }
}

template S4LayerParams<float> init_s4_params(std::size_t, std::size_t, double, double, std::uint64_t);
template S4LayerParams<double> init_s4_params(std::size_t, std::size_t, double, double, std::uint64_t);

template <typename Real>
std::complex<Real> cauchy_dot(std::span<const std::complex<Real>> v, std::complex<Real> omega,
                              std::span<const std::complex<Real>> lambda) {
  if (v.size() != lambda.size()) throw DimensionMismatch("cauchy_dot: v and lambda differ in length");
  std::complex<Real> acc{};
  for (std::size_t m = 0; m < v.size(); ++m) {
    const std::complex<Real> gap = omega - lambda[m];
    if (std::abs(gap) < static_cast<Real>(kPoleFloor)) {
      throw PoleError("cauchy_dot: omega coincides with pole " + std::to_string(m));
    }
    acc += v[m] / gap;
  }
  return acc;
}

template std::complex<float> cauchy_dot(std::span<const std::complex<float>>, std::complex<float>,
                                        std::span<const std::complex<float>>);
template std::complex<double> cauchy_dot(std::span<const std::complex<double>>, std::complex<double>,
                                         std::span<const std::complex<double>>);

ssm::Kernel<double> dplr_kernel_naive(const DPLRParams<double>& params, std::size_t length) {
  params.validate();
  using C = std::complex<double>;
  ssm::ContinuousSSM<C> sys;
  sys.a = reconstruct_dense(params.lambda, params.p);
  sys.b = params.b;
  sys.c = params.c;
  const auto discrete = ssm::discretize_bilinear(sys, std::exp(params.log_delta));
  const auto complex_kernel = ssm::unroll_kernel(discrete, length);
  ssm::Kernel<double> out;
  out.values.resize(length);
  for (std::size_t i = 0; i < length; ++i) out.values[i] = 2.0 * complex_kernel.values[i].real();
  return out;
}

// The truncated generating function of the half system at z is
//   F(z) = sum_{i<n} C A_bar^i B_bar z^i = c~ [(1-z) I - (1+z) delta/2 A]^-1 delta b
// with c~ = c (I - A_bar^n) whenever z^n = 1. For z != -1 this equals
//   2/(1+z) c~ (g I - A)^-1 b,  g = 2/delta (1-z)/(1+z),
// whose rank-1 correction Woodbury turns into four Cauchy sums. At z = -1 the
// bracket is 2I and F = delta/2 c~ b.
template <typename Real>
FastKernel<Real>::FastKernel(const DPLRParams<Real>& params, std::size_t length)
    : params_(params), length_(length), padded_(next_pow2(length)) {
  params_.validate();
  if (length == 0) throw InvalidDimension("kernel length must be positive");
  const std::size_t modes = params_.modes();
  const std::size_t n = padded_;
  delta_ = std::exp(params_.log_delta);
  if (!std::isfinite(delta_) || !(delta_ > Real{0})) throw InvalidStep("exp(log_delta) is not a valid step");

  a_ = DenseMatrix<Complex>(modes, modes);
  for (std::size_t r = 0; r < modes; ++r) {
    for (std::size_t c = 0; c < modes; ++c) a_(r, c) = -params_.p[r] * std::conj(params_.p[c]);
    a_(r, r) += params_.lambda[r];
  }
  const Real half_step = delta_ / Real{2};
  backward_ = DenseMatrix<Complex>(modes, modes);
  DenseMatrix<Complex> forward(modes, modes);
  for (std::size_t r = 0; r < modes; ++r) {
    for (std::size_t c = 0; c < modes; ++c) {
      const Complex eye = r == c ? Complex{1} : Complex{};
      backward_(r, c) = eye - half_step * a_(r, c);
      forward(r, c) = eye + half_step * a_(r, c);
    }
  }
  a_bar_ = ssm::LuDecomposition<Complex>(backward_).solve(forward);

  chain_.assign((n + 1) * modes, Complex{});
  std::copy(params_.c.begin(), params_.c.end(), chain_.begin());
  for (std::size_t i = 0; i < n; ++i) {
    const Complex* w = chain_.data() + i * modes;
    Complex* next = chain_.data() + (i + 1) * modes;
    for (std::size_t m = 0; m < modes; ++m) {
      const Complex wm = w[m];
      const Complex* row = &a_bar_(m, 0);
      for (std::size_t k = 0; k < modes; ++k) next[k] += wm * row[k];
    }
  }
  c_tilde_.resize(modes);
  const Complex* last = chain_.data() + n * modes;
  for (std::size_t m = 0; m < modes; ++m) c_tilde_[m] = params_.c[m] - last[m];

  std::vector<Complex> v00(modes), v01(modes), v10(modes), v11(modes);
  for (std::size_t m = 0; m < modes; ++m) {
    v00[m] = c_tilde_[m] * params_.b[m];
    v01[m] = c_tilde_[m] * params_.p[m];
    v10[m] = std::conj(params_.p[m]) * params_.b[m];
    v11[m] = std::conj(params_.p[m]) * params_.p[m];
  }

  spectrum_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Complex z = root_of_unity<Real>(j, n);
    if (n >= 2 && j == n / 2) {
      Complex s{};
      for (std::size_t m = 0; m < modes; ++m) s += v00[m];
      spectrum_[j] = half_step * s;
      continue;
    }
    const Complex scale = Real{2} / (Real{1} + z);
    const Complex g = (Real{2} / delta_) * (Real{1} - z) / (Real{1} + z);
    Complex k00{}, k01{}, k10{}, k11{};
    for (std::size_t m = 0; m < modes; ++m) {
      const Complex gap = g - params_.lambda[m];
      if (std::abs(gap) < static_cast<Real>(kPoleFloor)) {
        throw ResonanceFailure("generating-function node " + std::to_string(j) +
                               " coincides with mode " + std::to_string(m));
      }
      const Complex r = Real{1} / gap;
      k00 += v00[m] * r;
      k01 += v01[m] * r;
      k10 += v10[m] * r;
      k11 += v11[m] * r;
    }
    spectrum_[j] = scale * (k00 - k01 * k10 / (Real{1} + k11));
  }

  // Conjugate modes contribute conj(F(conj z)); the sum is Hermitian.
  std::vector<Complex> full(n);
  for (std::size_t j = 0; j < n; ++j) full[j] = spectrum_[j] + std::conj(spectrum_[(n - j) % n]);
  const FftPlan<Real> plan(n);
  plan.inverse(full);

  values_.resize(length_);
  for (std::size_t i = 0; i < n; ++i) {
    imag_residue_ = std::max(imag_residue_, static_cast<double>(std::abs(full[i].imag())));
    if (i < length_) values_[i] = full[i].real();
  }
  for (Real v : values_) {
    if (!std::isfinite(v)) throw Overflow("fast kernel produced a non-finite tap");
  }
}

template <typename Real>
DPLRParams<Real> FastKernel<Real>::backward(std::span<const Real> grad_kernel) const {
  if (grad_kernel.size() != length_) {
    throw DimensionMismatch("kernel gradient has " + std::to_string(grad_kernel.size()) +
                            " taps, kernel has " + std::to_string(length_));
  }
  const std::size_t modes = params_.modes();
  const std::size_t n = padded_;
  const auto& lambda = params_.lambda;
  const auto& p = params_.p;
  const auto& b = params_.b;

  // K = 2 Re(ifft(F)), so dL/dF = fft(2 dL/dK) / n.
  std::vector<Complex> grad_spectrum(n);
  for (std::size_t i = 0; i < length_; ++i) grad_spectrum[i] = Real{2} * grad_kernel[i];
  FftPlan<Real>(n).forward(grad_spectrum);
  const Real inv_n = Real{1} / static_cast<Real>(n);
  for (auto& v : grad_spectrum) v *= inv_n;

  DPLRParams<Real> grad = params_.zeros_like();
  std::vector<Complex> grad_c_tilde(modes);
  Real grad_delta{0};
  const Real half_step = delta_ / Real{2};

  std::vector<Complex> v00(modes), v01(modes), v10(modes), v11(modes), r(modes);
  for (std::size_t m = 0; m < modes; ++m) {
    v00[m] = c_tilde_[m] * b[m];
    v01[m] = c_tilde_[m] * p[m];
    v10[m] = std::conj(p[m]) * b[m];
    v11[m] = std::conj(p[m]) * p[m];
  }

  for (std::size_t j = 0; j < n; ++j) {
    const Complex gf = grad_spectrum[j];
    if (n >= 2 && j == n / 2) {
      Complex s{};
      for (std::size_t m = 0; m < modes; ++m) {
        s += v00[m];
        grad_c_tilde[m] += std::conj(half_step * b[m]) * gf;
        grad.b[m] += std::conj(half_step * c_tilde_[m]) * gf;
      }
      grad_delta += std::real(std::conj(gf) * (s / Real{2}));
      continue;
    }
    const Complex z = root_of_unity<Real>(j, n);
    const Complex scale = Real{2} / (Real{1} + z);
    const Complex g = (Real{2} / delta_) * (Real{1} - z) / (Real{1} + z);
    Complex k00{}, k01{}, k10{}, k11{};
    for (std::size_t m = 0; m < modes; ++m) {
      r[m] = Real{1} / (g - lambda[m]);
      k00 += v00[m] * r[m];
      k01 += v01[m] * r[m];
      k10 += v10[m] * r[m];
      k11 += v11[m] * r[m];
    }
    const Complex q = Real{1} / (Real{1} + k11);
    const Complex g00 = std::conj(scale) * gf;
    const Complex g01 = std::conj(-scale * k10 * q) * gf;
    const Complex g10 = std::conj(-scale * k01 * q) * gf;
    const Complex g11 = std::conj(scale * k01 * k10 * q * q) * gf;

    Complex grad_g{};
    for (std::size_t m = 0; m < modes; ++m) {
      const Complex rm = r[m];
      const Complex rc = std::conj(rm);
      grad_c_tilde[m] += std::conj(b[m] * rm) * g00 + std::conj(p[m] * rm) * g01;
      grad.b[m] += std::conj(c_tilde_[m] * rm) * g00 + p[m] * rc * g10;
      grad.p[m] += std::conj(c_tilde_[m] * rm) * g01 + b[m] * rm * std::conj(g10) +
                   p[m] * rc * g11 + p[m] * rm * std::conj(g11);
      const Complex gl = std::conj(rm * rm) * (std::conj(v00[m]) * g00 + std::conj(v01[m]) * g01 +
                                               std::conj(v10[m]) * g10 + std::conj(v11[m]) * g11);
      grad.lambda[m] += gl;
      grad_g -= gl;
    }
    grad_delta += std::real(std::conj(grad_g) * (-g / delta_));
  }

  // c~ = c - c A_bar^n through the stored chain w_{i+1} = w_i A_bar.
  for (std::size_t m = 0; m < modes; ++m) grad.c[m] += grad_c_tilde[m];
  DenseMatrix<Complex> grad_a_bar(modes, modes);
  std::vector<Complex> gw(modes), gw_prev(modes);
  for (std::size_t m = 0; m < modes; ++m) gw[m] = -grad_c_tilde[m];
  for (std::size_t i = n; i-- > 0;) {
    const Complex* w = chain_.data() + i * modes;
    for (std::size_t m = 0; m < modes; ++m) {
      const Complex wc = std::conj(w[m]);
      Complex* grow = &grad_a_bar(m, 0);
      const Complex* arow = &a_bar_(m, 0);
      Complex acc{};
      for (std::size_t k = 0; k < modes; ++k) {
        grow[k] += wc * gw[k];
        acc += std::conj(arow[k]) * gw[k];
      }
      gw_prev[m] = acc;
    }
    std::swap(gw, gw_prev);
  }
  for (std::size_t m = 0; m < modes; ++m) grad.c[m] += gw[m];

  // A_bar = Q^-1 (I + X), Q = I - X, X = delta/2 A:
  //   grad_X = Q^-H grad_A_bar (I + A_bar)^H.
  DenseMatrix<Complex> rhs(modes, modes);
  for (std::size_t r_ = 0; r_ < modes; ++r_) {
    for (std::size_t c = 0; c < modes; ++c) {
      Complex s{};
      for (std::size_t k = 0; k < modes; ++k) {
        const Complex shifted = a_bar_(c, k) + (c == k ? Complex{1} : Complex{});
        s += grad_a_bar(r_, k) * std::conj(shifted);
      }
      rhs(r_, c) = s;
    }
  }
  const auto grad_x = ssm::LuDecomposition<Complex>(conj_transpose(backward_)).solve(rhs);

  Real grad_delta_x{0};
  for (std::size_t r_ = 0; r_ < modes; ++r_) {
    for (std::size_t c = 0; c < modes; ++c) {
      grad_delta_x += std::real(std::conj(grad_x(r_, c)) * a_(r_, c));
    }
  }
  grad_delta += grad_delta_x / Real{2};

  // A = diag(lambda) - p p^H.
  for (std::size_t m = 0; m < modes; ++m) {
    grad.lambda[m] += half_step * grad_x(m, m);
    Complex gp{};
    for (std::size_t k = 0; k < modes; ++k) {
      gp += grad_x(m, k) * p[k] + std::conj(grad_x(k, m)) * p[k];
    }
    grad.p[m] -= half_step * gp;
  }
  grad.log_delta = delta_ * grad_delta;
  return grad;
}

template class FastKernel<float>;
template class FastKernel<double>;

}  // namespace fmri_s4::s4
