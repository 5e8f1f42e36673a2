#pragma once

// Diagonal-plus-low-rank (DPLR) S4 kernels.
//
// A channel stores M/2 complex modes, one per conjugate pair of the real
// M-dimensional state; the state matrix is A = diag(lambda) - p p^H and the
// emitted kernel is 2 Re(C_bar A_bar^i B_bar). Two generators produce the same
// kernel: `dplr_kernel_naive` materializes A and walks the recurrence through
// ssm_core, and `FastKernel` evaluates the truncated generating function at
// roots of unity with Cauchy sums and one inverse FFT.
//
// Gradients use the convention g = dL/dRe(x) + i dL/dIm(x) for every complex
// coordinate x, so real-coordinate partials are just Re(g) and Im(g).

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fmri_s4/dense_matrix.hpp"
#include "fmri_s4/ssm_core.hpp"

namespace fmri_s4::s4 {

template <typename Real>
struct DPLRParams {
  using Complex = std::complex<Real>;

  std::vector<Complex> lambda;  // diagonal of Lambda, one entry per conjugate pair
  std::vector<Complex> p;       // rank-1 factor, A = Lambda - p p^H
  std::vector<Complex> b;
  std::vector<Complex> c;
  Real log_delta{};
  Real d{};

  std::size_t modes() const noexcept { return lambda.size(); }
  std::size_t state_dim() const noexcept { return 2 * lambda.size(); }

  /// Throws DimensionMismatch unless lambda, p, b and c share one length.
  void validate() const;

  /// All-zero record with the same shape; used as a gradient accumulator.
  DPLRParams zeros_like() const;

  template <typename To>
  DPLRParams<To> cast() const {
    DPLRParams<To> out;
    const auto conv = [](const std::vector<Complex>& v) {
      std::vector<std::complex<To>> r(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        r[i] = {static_cast<To>(v[i].real()), static_cast<To>(v[i].imag())};
      }
      return r;
    };
    out.lambda = conv(lambda);
    out.p = conv(p);
    out.b = conv(b);
    out.c = conv(c);
    out.log_delta = static_cast<To>(log_delta);
    out.d = static_cast<To>(d);
    return out;
  }
};

/// H independent channel copies that share the state dimension.
template <typename Real>
struct S4LayerParams {
  std::vector<DPLRParams<Real>> channels;

  std::size_t size() const noexcept { return channels.size(); }
};

/// HiPPO-LegS matrix: -sqrt(2n+1) sqrt(2k+1) below the diagonal, -(n+1) on it.
DenseMatrix<double> hippo_legs(std::size_t state_dim);

/// Normal-plus-low-rank form of hippo_legs(M), truncated to the M/2 modes with
/// positive imaginary part. `basis` holds the matching M x (M/2) eigenvectors.
struct NplrForm {
  std::vector<std::complex<double>> lambda;
  std::vector<std::complex<double>> p;
  std::vector<std::complex<double>> b;
  DenseMatrix<std::complex<double>> basis;
};

NplrForm nplr_decompose(std::size_t state_dim);

/// diag(lambda) - p p^H.
DenseMatrix<std::complex<double>> reconstruct_dense(std::span<const std::complex<double>> lambda,
                                                    std::span<const std::complex<double>> p);

/// Rebuilds the real M x M state matrix from an NPLR form by restoring the
/// conjugate modes and undoing the change of basis.
DenseMatrix<double> reconstruct_hippo(const NplrForm& form);

/// HiPPO-initialized layer: lambda, p, b from nplr_decompose(M) in every
/// channel; c standard complex normal; log_delta log-uniform over
/// [delta_min, delta_max]; d standard normal. Deterministic in `seed`.
template <typename Real>
S4LayerParams<Real> init_s4_params(std::size_t channels, std::size_t state_dim, double delta_min,
                                   double delta_max, std::uint64_t seed);

/// sum_m v_m / (omega - lambda_m). Throws PoleError if omega sits on a pole.
template <typename Real>
std::complex<Real> cauchy_dot(std::span<const std::complex<Real>> v, std::complex<Real> omega,
                              std::span<const std::complex<Real>> lambda);

/// Oracle path: materialize A, discretize with ssm_core, unroll, double Re.
ssm::Kernel<double> dplr_kernel_naive(const DPLRParams<double>& params, std::size_t length);

/// Frequency-domain kernel generator with a retained trace for backward().
template <typename Real>
class FastKernel {
 public:
  using Complex = std::complex<Real>;

  FastKernel(const DPLRParams<Real>& params, std::size_t length);

  const std::vector<Real>& values() const noexcept { return values_; }
  std::size_t length() const noexcept { return length_; }

  /// Largest |Im| left by the inverse FFT of the conjugate-symmetric spectrum.
  double imag_residue() const noexcept { return imag_residue_; }

  /// Gradient of a scalar loss with respect to lambda, p, b, c and log_delta,
  /// given dL/dK for the `length` kernel taps. The `d` field is left zero.
  DPLRParams<Real> backward(std::span<const Real> grad_kernel) const;

 private:
  DPLRParams<Real> params_;
  std::size_t length_;
  std::size_t padded_;
  Real delta_;
  DenseMatrix<Complex> a_;          // Lambda - p p^H
  DenseMatrix<Complex> a_bar_;
  DenseMatrix<Complex> backward_;   // I - delta/2 A
  std::vector<Complex> chain_;      // row vectors c A_bar^i, i = 0..padded
  std::vector<Complex> c_tilde_;    // c (I - A_bar^padded)
  std::vector<Complex> spectrum_;   // half-system generating function at roots
  std::vector<Real> values_;
  double imag_residue_ = 0.0;
};

extern template class FastKernel<float>;
extern template class FastKernel<double>;

template <typename Real>
ssm::Kernel<Real> dplr_kernel_fast(const DPLRParams<Real>& params, std::size_t length) {
  return {FastKernel<Real>(params, length).values()};
}

}  // namespace fmri_s4::s4
