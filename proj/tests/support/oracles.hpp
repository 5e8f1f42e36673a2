#pragma once

// Test-only reference implementations. None of these call into the code
// paths they are used to check.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "fmri_s4/ssm_core.hpp"

namespace fmri_s4::testing {

/// O(n^2) DFT, X_j = sum_i x_i exp(-2 pi i ij/n).
inline std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> s{};
    for (std::size_t i = 0; i < n; ++i) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(i * j % n) / static_cast<double>(n);
      s += x[i] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[j] = s;
  }
  return out;
}

/// Direct causal convolution with skip term.
template <typename Real>
std::vector<Real> direct_causal_convolve(const std::vector<Real>& kernel, const std::vector<Real>& u, Real d) {
  std::vector<Real> y(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    double s = static_cast<double>(d) * u[k];
    for (std::size_t i = 0; i <= k && i < kernel.size(); ++i) s += static_cast<double>(kernel[i]) * u[k - i];
    y[k] = static_cast<Real>(s);
  }
  return y;
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
inline Eigen::MatrixXd random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ();
}

/// Real M x M matrix whose eigenvalues have real parts drawn from
/// [re_min, re_max] and imaginary parts from [-im_max, im_max] (in
/// conjugate pairs), rotated by a random orthogonal similarity.
inline Eigen::MatrixXd random_left_half_plane(std::size_t m, double re_min, double re_max, double im_max,
                                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> re(re_min, re_max);
  std::uniform_real_distribution<double> im(0.0, im_max);
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(m, m);
  std::size_t i = 0;
  for (; i + 1 < m; i += 2) {
    const double a = re(rng);
    const double w = im(rng);
    block(i, i) = a;
    block(i + 1, i + 1) = a;
    block(i, i + 1) = w;
    block(i + 1, i) = -w;
  }
  if (i < m) block(i, i) = re(rng);
  const Eigen::MatrixXd q = random_orthogonal(m, rng);
  return q * block * q.transpose();
}

inline ssm::ContinuousSSM<double> random_continuous(std::size_t m, std::mt19937_64& rng, double re_min = -2.0,
                                                    double re_max = -0.01) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::MatrixXd a = random_left_half_plane(m, re_min, re_max, 3.0, rng);
  ssm::ContinuousSSM<double> sys;
  sys.a = DenseMatrix<double>(m, m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < m; ++c) sys.a(r, c) = a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  sys.b.resize(m);
  sys.c.resize(m);
  for (auto& v : sys.b) v = normal(rng) / std::sqrt(static_cast<double>(m));
  for (auto& v : sys.c) v = normal(rng) / std::sqrt(static_cast<double>(m));
  sys.d = normal(rng);
  return sys;
}

inline double spectral_radius(const DenseMatrix<double>& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a(r, c);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Central finite difference of f along every coordinate of theta.
inline std::vector<double> central_differences(const std::function<double(const std::vector<double>&)>& f,
                                               std::vector<double> theta, double h) {
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = f(theta);
    theta[i] = saved - h;
    const double down = f(theta);
    theta[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace fmri_s4::testing
