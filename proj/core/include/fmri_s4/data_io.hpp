#pragma once

// Datasets, CSV interchange, synthetic generators and stratified splits.
//
// On-disk layout written by write_dataset():
//   <dir>/manifest.csv        id,path,label (paths relative to <dir>)
//   <dir>/data/<id>.csv       header roi_0..roi_{N-1}; one row per timepoint
//   <dir>/meta.json           provenance, see README for the key list

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fmri_s4/dense_matrix.hpp"

namespace fmri_s4::data {

struct Sample {
  std::string id;
  DenseMatrix<double> x;  // N x T
  std::size_t label = 0;

  std::size_t n_rois() const noexcept { return x.rows(); }
  std::size_t length() const noexcept { return x.cols(); }
};

/// Generator name, seed and parameters recorded next to a written dataset.
struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> parameters;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t n_rois = 0;
  std::vector<std::string> class_names;
  Provenance provenance;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }
  std::vector<std::size_t> labels() const;
  std::size_t count_label(std::size_t label) const;

  /// Samples at `indices`, in that order; classes and provenance are kept.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Rows = timepoints, columns = ROIs, optional all-text header row. Returns
/// the N x T transpose. Throws ParseError or NonFiniteValue with the 1-based
/// line and column of the offending cell, MissingFile if absent.
DenseMatrix<double> load_timeseries(const std::filesystem::path& path);

/// CSV with header `id,path,label`; paths resolve relative to the manifest.
/// Labels map to class indices in sorted label order.
Dataset load_manifest(const std::filesystem::path& path);

/// Writes the layout described above; values use 9 significant digits.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Where the two label-carrying tokens of one long-range sample sit.
struct LongRangeTokens {
  int first_sign = 0;
  std::size_t first_start = 0;
  int second_sign = 0;
  std::size_t second_start = 0;
};

struct LongRangeOptions {
  double noise_std = 0.3;
  double amplitude = 2.0;
  std::size_t token_width = 7;
  std::size_t distractors = 4;
};

/// Smooth noise on N channels plus +-1 bumps in channel 0: a first token
/// starting in the first 25 steps, a second one starting span..span+24 steps
/// later, and random-sign distractor bumps strictly between them. Label 1
/// iff the two token signs differ. Throws InvalidSpan unless
/// span + 50 <= length.
Dataset gen_synthetic_longrange(std::size_t n_samples, std::size_t n_rois = 16, std::size_t length = 400,
                                std::size_t span = 300, std::uint64_t seed = 0,
                                std::vector<LongRangeTokens>* tokens = nullptr, const LongRangeOptions& options = {});

/// Two fixed random stable linear systems (spectral radii 0.6 and 0.9, shared
/// eigen-angles and readout) driven by white noise; class c samples come from
/// system c. Balanced to within one sample.
Dataset gen_synthetic_ssm(std::size_t n_samples, std::size_t n_rois = 16, std::size_t length = 100,
                          std::uint64_t seed = 0);

/// State matrices of the two class systems used by gen_synthetic_ssm(seed).
std::pair<DenseMatrix<double>, DenseMatrix<double>> synthetic_ssm_state_matrices(std::uint64_t seed);

/// Fold index per sample: per-class round robin after a seeded shuffle.
/// Throws InsufficientClassMembers if a present class has fewer than k members.
std::vector<std::size_t> stratified_folds(const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed);

/// Splits `indices` into (kept, held_out) with round(fraction * n_c), at
/// least one, held out per class.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const std::vector<std::size_t>& indices, const std::vector<std::size_t>& labels, double fraction,
    std::uint64_t seed);

/// 9-significant-digit decimal, the interchange precision.
std::string format_value(double v);

}  // namespace fmri_s4::data
