#include "fmri_s4/ssm_core.hpp"

#include <complex>

#include "fmri_s4/fft.hpp"

namespace fmri_s4::ssm {

template <typename Real>
std::vector<Real> causal_convolve(std::span<const Real> kernel, std::span<const Real> u, Real d) {
  const std::size_t length = u.size();
  std::vector<Real> y(length, Real{});
  if (length == 0) return y;

  const std::size_t n = next_pow2(2 * length - 1);
  const FftPlan<Real> plan(n);
  std::vector<std::complex<Real>> kf(n), uf(n);
  const std::size_t taps = std::min(kernel.size(), length);
  for (std::size_t i = 0; i < taps; ++i) kf[i] = kernel[i];
  for (std::size_t i = 0; i < length; ++i) uf[i] = u[i];
  plan.forward(kf);
  plan.forward(uf);
  for (std::size_t i = 0; i < n; ++i) uf[i] *= kf[i];
  plan.inverse(uf);
  for (std::size_t i = 0; i < length; ++i) y[i] = uf[i].real() + d * u[i];
  return y;
}

template std::vector<float> causal_convolve(std::span<const float>, std::span<const float>, float);
template std::vector<double> causal_convolve(std::span<const double>, std::span<const double>, double);

}  // namespace fmri_s4::ssm
