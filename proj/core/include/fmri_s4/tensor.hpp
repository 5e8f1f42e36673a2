#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fmri_s4/errors.hpp"

namespace fmri_s4::nn {

enum class Mode { train, eval };

/// Batch x channels x time, time contiguous.
template <typename Real>
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t batch, std::size_t channels, std::size_t time, Real fill = Real{})
      : batch_(batch), channels_(channels), time_(time), values_(batch * channels * time, fill) {}

  std::size_t batch() const noexcept { return batch_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t time() const noexcept { return time_; }

  Real& operator()(std::size_t b, std::size_t c, std::size_t t) {
    assert(b < batch_ && c < channels_ && t < time_);
    return values_[(b * channels_ + c) * time_ + t];
  }
  Real operator()(std::size_t b, std::size_t c, std::size_t t) const {
    assert(b < batch_ && c < channels_ && t < time_);
    return values_[(b * channels_ + c) * time_ + t];
  }

  std::span<Real> series(std::size_t b, std::size_t c) {
    return {values_.data() + (b * channels_ + c) * time_, time_};
  }
  std::span<const Real> series(std::size_t b, std::size_t c) const {
    return {values_.data() + (b * channels_ + c) * time_, time_};
  }
  /// All channels of one sample, channel-major.
  std::span<Real> sample(std::size_t b) { return {values_.data() + b * channels_ * time_, channels_ * time_}; }
  std::span<const Real> sample(std::size_t b) const {
    return {values_.data() + b * channels_ * time_, channels_ * time_};
  }

  std::span<Real> values() noexcept { return values_; }
  std::span<const Real> values() const noexcept { return values_; }

  bool same_shape(const Tensor3& o) const noexcept {
    return batch_ == o.batch_ && channels_ == o.channels_ && time_ == o.time_;
  }

 private:
  std::size_t batch_ = 0;
  std::size_t channels_ = 0;
  std::size_t time_ = 0;
  std::vector<Real> values_;
};

/// Valid-timepoint mask, batch x time.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t batch, std::size_t time, bool valid = true)
      : batch_(batch), time_(time), valid_(batch * time, valid ? 1 : 0) {}

  /// Prefix masks: sample b is valid for t < lengths[b].
  static Mask from_lengths(std::span<const std::size_t> lengths, std::size_t time) {
    Mask m(lengths.size(), time, false);
    for (std::size_t b = 0; b < lengths.size(); ++b) {
      for (std::size_t t = 0; t < lengths[b] && t < time; ++t) m.set(b, t, true);
    }
    return m;
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t time() const noexcept { return time_; }

  bool operator()(std::size_t b, std::size_t t) const { return valid_[b * time_ + t] != 0; }
  void set(std::size_t b, std::size_t t, bool v) { valid_[b * time_ + t] = v ? 1 : 0; }

  std::span<const std::uint8_t> row(std::size_t b) const { return {valid_.data() + b * time_, time_}; }

  std::size_t valid_count(std::size_t b) const {
    std::size_t n = 0;
    for (std::uint8_t v : row(b)) n += v;
    return n;
  }

 private:
  std::size_t batch_ = 0;
  std::size_t time_ = 0;
  std::vector<std::uint8_t> valid_;
};

template <typename Real>
void check_mask(const Tensor3<Real>& x, const Mask& mask, const char* where) {
  if (mask.batch() != x.batch() || mask.time() != x.time()) {
    throw ShapeMismatch(std::string(where) + ": mask is " + std::to_string(mask.batch()) + "x" +
                        std::to_string(mask.time()) + ", input is " + std::to_string(x.batch()) + "x" +
                        std::to_string(x.channels()) + "x" + std::to_string(x.time()));
  }
}

/// Zeroes every masked-out timepoint in place.
template <typename Real>
void apply_mask(Tensor3<Real>& x, const Mask& mask) {
  for (std::size_t b = 0; b < x.batch(); ++b) {
    const auto valid = mask.row(b);
    for (std::size_t c = 0; c < x.channels(); ++c) {
      auto s = x.series(b, c);
      for (std::size_t t = 0; t < s.size(); ++t) {
        if (!valid[t]) s[t] = Real{};
      }
    }
  }
}

}  // namespace fmri_s4::nn
