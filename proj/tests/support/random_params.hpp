#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <random>

#include "fmri_s4/s4_kernel.hpp"

namespace fmri_s4::testing {

/// Random stable DPLR channel: Re(lambda) in [-1, -0.05], |Im(lambda)| up to
/// the mode count, unit-scale complex normal p, b, c and log-uniform delta.
inline s4::DPLRParams<double> random_dplr(std::size_t modes, std::mt19937_64& rng, double delta_min = 1e-3,
                                          double delta_max = 1e-1, double p_scale = 1.0) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  std::uniform_real_distribution<double> re(-1.0, -0.05);
  std::uniform_real_distribution<double> im(-static_cast<double>(modes), static_cast<double>(modes));
  std::uniform_real_distribution<double> log_delta(std::log(delta_min), std::log(delta_max));
  s4::DPLRParams<double> params;
  for (std::size_t m = 0; m < modes; ++m) {
    params.lambda.emplace_back(re(rng), im(rng));
    params.p.emplace_back(p_scale * normal(rng), p_scale * normal(rng));
    params.b.emplace_back(normal(rng), normal(rng));
    params.c.emplace_back(normal(rng), normal(rng));
  }
  params.log_delta = log_delta(rng);
  params.d = normal(rng);
  return params;
}

}  // namespace fmri_s4::testing
