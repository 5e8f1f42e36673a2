#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace fmri_s4 {

/// Smallest power of two that is >= n (n = 0 maps to 1).
std::size_t next_pow2(std::size_t n) noexcept;

bool is_pow2(std::size_t n) noexcept;

/// Precomputed in-place radix-2 FFT of a fixed power-of-two size.
///
/// forward() computes X_j = sum_i x_i exp(-2 pi i ij/n); inverse() applies the
/// conjugate transform and divides by n, so inverse(forward(x)) == x.
template <typename Real>
class FftPlan {
 public:
  using Complex = std::complex<Real>;

  explicit FftPlan(std::size_t n);

  std::size_t size() const noexcept { return n_; }

  void forward(std::span<Complex> data) const;
  void inverse(std::span<Complex> data) const;

 private:
  void transform(std::span<Complex> data, bool inverse) const;

  std::size_t n_;
  std::vector<std::size_t> bit_reverse_;
  std::vector<Complex> twiddles_;  // exp(-2 pi i k / n), k < n/2
};

extern template class FftPlan<float>;
extern template class FftPlan<double>;

}  // namespace fmri_s4
