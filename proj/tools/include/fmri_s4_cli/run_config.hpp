#pragma once

// Effective settings of one CLI run: model and training hyperparameters,
// protocol options and data paths. Persisted as flat `key = value` text.

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fmri_s4/model.hpp"
#include "fmri_s4/training.hpp"

namespace fmri_s4::cli {

/// Bad flag value, unknown config key or missing input; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  nn::ModelConfig model;  // n_rois and n_classes come from the data
  train::TrainConfig train;
  std::size_t folds = 5;
  std::size_t repeats = 3;
  std::size_t jobs = 1;
  double val_fraction = 0.1;
  std::string manifest;
  std::string out;

  /// Every key accepted by set(), in the order to_text() writes them.
  static const std::vector<std::string>& keys();

  /// Throws UsageError on an unknown key or unparsable value.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// One `key = value` line per key.
  std::string to_text() const;

  /// Applies a config file on top of the current values. Blank lines and
  /// lines starting with '#' are skipped. Throws UsageError.
  void merge_file(const std::filesystem::path& path);
};

}  // namespace fmri_s4::cli
