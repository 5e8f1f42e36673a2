#pragma once

// Continuous and discrete linear state-space systems, bilinear discretization,
// the step/scan recurrence and its convolution-kernel form.
//
// Everything here is a pure function of its arguments. The scalar type may be
// real (float, double) or complex (std::complex<double>); complex systems are
// how the DPLR oracle path in s4_kernel reuses this code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fmri_s4/dense_matrix.hpp"
#include "fmri_s4/errors.hpp"

namespace fmri_s4::ssm {

namespace detail {

template <typename T>
struct is_complex : std::false_type {};
template <typename R>
struct is_complex<std::complex<R>> : std::true_type {};

template <typename T>
struct real_of {
  using type = T;
};
template <typename R>
struct real_of<std::complex<R>> {
  using type = R;
};

template <typename T>
bool is_finite(const T& v) {
  if constexpr (is_complex<T>::value) {
    return std::isfinite(v.real()) && std::isfinite(v.imag());
  } else {
    return std::isfinite(v);
  }
}

}  // namespace detail

template <typename T>
using real_t = typename detail::real_of<T>::type;

/// z'(t) = A z(t) + B u(t),  y(t) = C z(t) + D u(t).
template <typename T>
struct ContinuousSSM {
  DenseMatrix<T> a;
  std::vector<T> b;
  std::vector<T> c;
  T d{};

  std::size_t state_dim() const noexcept { return a.rows(); }

  void validate() const {
    if (!a.is_square()) throw DimensionMismatch("A must be square");
    if (b.size() != a.rows()) throw DimensionMismatch("B must have as many rows as A");
    if (c.size() != a.cols()) throw DimensionMismatch("C must have as many columns as A");
    const auto finite = [](const auto& v) { return detail::is_finite(v); };
    if (!std::all_of(a.values().begin(), a.values().end(), finite) ||
        !std::all_of(b.begin(), b.end(), finite) || !std::all_of(c.begin(), c.end(), finite) ||
        !detail::is_finite(d)) {
      throw Overflow("continuous system has non-finite entries");
    }
  }
};

/// z_k = A_bar z_{k-1} + B_bar u_k,  y_k = C_bar z_k + D_bar u_k.
template <typename T>
struct DiscreteSSM {
  DenseMatrix<T> a_bar;
  std::vector<T> b_bar;
  std::vector<T> c_bar;
  T d_bar{};
  double delta = 0.0;

  std::size_t state_dim() const noexcept { return a_bar.rows(); }
};

/// Impulse response (C_bar A_bar^i B_bar)_{i < L}.
template <typename T>
struct Kernel {
  std::vector<T> values;

  std::size_t size() const noexcept { return values.size(); }
};

/// LU factorization with partial pivoting, P A = L U, stored compactly.
template <typename T>
class LuDecomposition {
 public:
  using Real = real_t<T>;

  /// Throws SingularDiscretization when a pivot falls below
  /// `relative_threshold` times the largest row norm of `a`.
  explicit LuDecomposition(DenseMatrix<T> a, double relative_threshold = 1e-12)
      : lu_(std::move(a)), perm_(lu_.rows()) {
    if (!lu_.is_square()) throw DimensionMismatch("LU requires a square matrix");
    const std::size_t n = lu_.rows();
    double max_row_norm = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (const T& v : lu_.row(r)) s += static_cast<double>(std::norm(v));
      max_row_norm = std::max(max_row_norm, std::sqrt(s));
    }
    const double floor = relative_threshold * max_row_norm;
    for (std::size_t i = 0; i < n; ++i) perm_[i] = i;

    for (std::size_t k = 0; k < n; ++k) {
      std::size_t pivot = k;
      double best = std::abs(lu_(k, k));
      for (std::size_t r = k + 1; r < n; ++r) {
        const double mag = std::abs(lu_(r, k));
        if (mag > best) {
          best = mag;
          pivot = r;
        }
      }
      if (!(best >= floor) || best == 0.0) {
        throw SingularDiscretization("resolvent is numerically singular (pivot " +
                                     std::to_string(best) + " at column " + std::to_string(k) + ")");
      }
      if (pivot != k) {
        for (std::size_t c = 0; c < n; ++c) std::swap(lu_(k, c), lu_(pivot, c));
        std::swap(perm_[k], perm_[pivot]);
      }
      const T inv_pivot = T{1} / lu_(k, k);
      for (std::size_t r = k + 1; r < n; ++r) {
        const T factor = lu_(r, k) * inv_pivot;
        lu_(r, k) = factor;
        if (factor == T{}) continue;
        for (std::size_t c = k + 1; c < n; ++c) lu_(r, c) -= factor * lu_(k, c);
      }
    }
  }

  std::size_t size() const noexcept { return lu_.rows(); }

  std::vector<T> solve(std::span<const T> rhs) const {
    const std::size_t n = size();
    if (rhs.size() != n) throw DimensionMismatch("LU solve: right-hand side length mismatch");
    std::vector<T> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = rhs[perm_[i]];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) x[i] -= lu_(i, j) * x[j];
    }
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t j = i + 1; j < n; ++j) x[i] -= lu_(i, j) * x[j];
      x[i] /= lu_(i, i);
    }
    return x;
  }

  /// Solves A X = B column by column.
  DenseMatrix<T> solve(const DenseMatrix<T>& rhs) const {
    const std::size_t n = size();
    if (rhs.rows() != n) throw DimensionMismatch("LU solve: right-hand side row mismatch");
    DenseMatrix<T> out(n, rhs.cols());
    std::vector<T> column(n);
    for (std::size_t c = 0; c < rhs.cols(); ++c) {
      for (std::size_t r = 0; r < n; ++r) column[r] = rhs(r, c);
      const auto x = solve(std::span<const T>(column));
      for (std::size_t r = 0; r < n; ++r) out(r, c) = x[r];
    }
    return out;
  }

 private:
  DenseMatrix<T> lu_;
  std::vector<std::size_t> perm_;
};

/// Bilinear (Tustin) discretization:
///   A_bar = (I - delta/2 A)^-1 (I + delta/2 A),  B_bar = (I - delta/2 A)^-1 delta B.
template <typename T>
DiscreteSSM<T> discretize_bilinear(const ContinuousSSM<T>& sys, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw InvalidStep("discretization step must be positive and finite, got " +
                      std::to_string(delta));
  }
  sys.validate();
  const std::size_t m = sys.state_dim();
  const T half_step = T(static_cast<real_t<T>>(delta / 2.0));

  DenseMatrix<T> backward(m, m);  // I - delta/2 A
  DenseMatrix<T> forward(m, m);   // I + delta/2 A
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      const T scaled = half_step * sys.a(r, c);
      const T eye = r == c ? T{1} : T{};
      backward(r, c) = eye - scaled;
      forward(r, c) = eye + scaled;
    }
  }
  const LuDecomposition<T> lu(std::move(backward));

  std::vector<T> scaled_b(m);
  const T step = T(static_cast<real_t<T>>(delta));
  for (std::size_t i = 0; i < m; ++i) scaled_b[i] = step * sys.b[i];

  DiscreteSSM<T> out;
  out.a_bar = lu.solve(forward);
  out.b_bar = lu.solve(std::span<const T>(scaled_b));
  out.c_bar = sys.c;
  out.d_bar = sys.d;
  out.delta = delta;
  return out;
}

/// One recurrence step; returns (z_k, y_k).
template <typename T>
std::pair<std::vector<T>, T> step(const DiscreteSSM<T>& sys, std::type_identity_t<std::span<const T>> z_prev,
                                 std::type_identity_t<T> u_k) {
  const std::size_t m = sys.state_dim();
  if (z_prev.size() != m) {
    throw DimensionMismatch("state has " + std::to_string(z_prev.size()) +
                            " entries, system expects " + std::to_string(m));
  }
  std::vector<T> z(m);
  T y = sys.d_bar * u_k;
  for (std::size_t r = 0; r < m; ++r) {
    T acc = sys.b_bar[r] * u_k;
    const auto row = sys.a_bar.row(r);
    for (std::size_t c = 0; c < m; ++c) acc += row[c] * z_prev[c];
    z[r] = acc;
    y += sys.c_bar[r] * acc;
  }
  return {std::move(z), y};
}

/// Runs the recurrence from the zero state over the whole input.
template <typename T>
std::vector<T> scan(const DiscreteSSM<T>& sys, std::type_identity_t<std::span<const T>> u) {
  std::vector<T> z(sys.state_dim(), T{});
  std::vector<T> y;
  y.reserve(u.size());
  for (const T& uk : u) {
    auto [next, yk] = step(sys, std::span<const T>(z), uk);
    z = std::move(next);
    y.push_back(yk);
  }
  return y;
}

/// values[i] = C_bar A_bar^i B_bar through the running vector v_{i+1} = A_bar v_i.
template <typename T>
Kernel<T> unroll_kernel(const DiscreteSSM<T>& sys, std::size_t length) {
  if (length == 0) throw InvalidDimension("kernel length must be positive");
  const std::size_t m = sys.state_dim();
  std::vector<T> v = sys.b_bar;
  std::vector<T> next(m);
  Kernel<T> kernel;
  kernel.values.resize(length);
  for (std::size_t i = 0; i < length; ++i) {
    T acc{};
    for (std::size_t r = 0; r < m; ++r) acc += sys.c_bar[r] * v[r];
    if (!detail::is_finite(acc)) {
      throw Overflow("kernel entry " + std::to_string(i) + " is not finite; system unstable at this length");
    }
    kernel.values[i] = acc;
    for (std::size_t r = 0; r < m; ++r) {
      T s{};
      const auto row = sys.a_bar.row(r);
      for (std::size_t c = 0; c < m; ++c) s += row[c] * v[c];
      next[r] = s;
    }
    std::swap(v, next);
  }
  return kernel;
}

/// y_k = sum_{i<=k} kernel[i] u[k-i] + d u[k], via zero-padded FFT of length
/// next_pow2(2L - 1). Kernels shorter than u are zero-extended; longer ones
/// are truncated to u's length.
template <typename Real>
std::vector<Real> causal_convolve(std::span<const Real> kernel, std::span<const Real> u, Real d);

extern template std::vector<float> causal_convolve(std::span<const float>, std::span<const float>, float);
extern template std::vector<double> causal_convolve(std::span<const double>, std::span<const double>,
                                                    double);

}  // namespace fmri_s4::ssm
