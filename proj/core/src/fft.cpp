#include "fmri_s4/fft.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "fmri_s4/errors.hpp"

namespace fmri_s4 {

std::size_t next_pow2(std::size_t n) noexcept {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

bool is_pow2(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

template <typename Real>
FftPlan<Real>::FftPlan(std::size_t n) : n_(n) {
  if (!is_pow2(n)) {
    throw InvalidDimension("FFT size must be a power of two, got " + std::to_string(n));
  }
  std::size_t log2n = 0;
  while ((std::size_t{1} << log2n) < n) ++log2n;

  bit_reverse_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t b = 0; b < log2n; ++b) {
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2n - 1 - b);
    }
    bit_reverse_[i] = r;
  }

  twiddles_.resize(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddles_[k] = Complex(static_cast<Real>(std::cos(angle)), static_cast<Real>(std::sin(angle)));
  }
}

template <typename Real>
void FftPlan<Real>::forward(std::span<Complex> data) const {
  transform(data, false);
}

template <typename Real>
void FftPlan<Real>::inverse(std::span<Complex> data) const {
  transform(data, true);
  const Real scale = Real{1} / static_cast<Real>(n_);
  for (auto& v : data) v *= scale;
}

template <typename Real>
void FftPlan<Real>::transform(std::span<Complex> data, bool inverse) const {
  if (data.size() != n_) {
    throw DimensionMismatch("FFT buffer has " + std::to_string(data.size()) +
                            " entries, plan expects " + std::to_string(n_));
  }
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t j = bit_reverse_[i];
    if (i < j) std::swap(data[i], data[j]);
  }
  // Butterflies on split re/im arithmetic; std::complex multiply carries NaN
  // handling that defeats vectorization.
  for (std::size_t len = 2; len <= n_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n_ / len;
    for (std::size_t start = 0; start < n_; start += len) {
      Complex* lo = data.data() + start;
      Complex* hi = lo + half;
      for (std::size_t k = 0; k < half; ++k) {
        const Complex w = twiddles_[k * stride];
        const Real wr = w.real();
        const Real wi = inverse ? -w.imag() : w.imag();
        const Real hr = hi[k].real();
        const Real hi_im = hi[k].imag();
        const Real tr = wr * hr - wi * hi_im;
        const Real ti = wr * hi_im + wi * hr;
        const Real lr = lo[k].real();
        const Real li = lo[k].imag();
        lo[k] = Complex(lr + tr, li + ti);
        hi[k] = Complex(lr - tr, li - ti);
      }
    }
  }
}

template class FftPlan<float>;
template class FftPlan<double>;

}  // namespace fmri_s4
