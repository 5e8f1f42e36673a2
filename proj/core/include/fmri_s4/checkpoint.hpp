#pragma once

// Flat little-endian model container.
//
//   bytes   "FS4C"
//   u32     format version (1)
//   u32 x7  n_rois, d_model, k, k_conv, k_s4, d_state, n_classes
//   f64 x3  dropout, delta_min, delta_max
//   u32     class name count, then per name: u32 byte length, UTF-8 bytes
//   u32     tensor count, then per tensor:
//             u32 name length, name bytes, u32 ndim, u32 dims[ndim],
//             f32 values[prod(dims)]
//
// Tensors are written in Model::parameters() order and include batch-norm
// running moments. Loading matches tensors by name and shape.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fmri_s4/model.hpp"

namespace fmri_s4::nn {

inline constexpr char kCheckpointMagic[4] = {'F', 'S', '4', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
struct LoadedModel {
  Model<Real> model;
  std::vector<std::string> class_names;
};

template <typename Real>
void write_checkpoint(std::ostream& out, const Model<Real>& model, const std::vector<std::string>& class_names);

/// Throws CheckpointError on a malformed, truncated or mismatched stream.
template <typename Real>
LoadedModel<Real> read_checkpoint(std::istream& in);

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const Model<Real>& model,
                     const std::vector<std::string>& class_names);

/// Throws MissingFile when `path` does not exist.
template <typename Real>
LoadedModel<Real> load_checkpoint(const std::filesystem::path& path);

}  // namespace fmri_s4::nn
