#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace fmri_s4::nn {

/// Named flat tensor with its gradient. Buffers (e.g. batch-norm running
/// moments) are Parameters with trainable == false and no gradient use.
template <typename Real>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, std::vector<std::size_t> shape_, bool trainable_ = true, Real fill = Real{})
      : name(std::move(name_)), shape(std::move(shape_)), trainable(trainable_) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    value.assign(n, fill);
    grad.assign(n, Real{});
  }

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), Real{}); }
};

template <typename Real>
using ParameterList = std::vector<Parameter<Real>*>;

template <typename Real>
using ConstParameterList = std::vector<const Parameter<Real>*>;

}  // namespace fmri_s4::nn
