#pragma once

#include <filesystem>

#include "dimshrink/volume.hpp"

namespace dimshrink {

/// Reads a single-file NIfTI-1 image (.nii or .nii.gz). Data is kept in file
/// order; scl_slope/scl_inter are applied, nothing else. The result's
/// origin_dims equal its dims and crop_offset is zero.
///
/// Throws FileMissingError, HeaderError (short or malformed header,
/// unsupported datatype), DimensionalityError (not a 3D scalar image) or
/// PayloadError (short or non-finite voxel data).
Volume load_volume(const std::filesystem::path& path);

/// Loads a label image; every voxel must be one of {0, 1, 2, 4}.
LabelMap load_labels(const std::filesystem::path& path);

/// Writes float32 voxels. A ".gz" suffix selects gzip compression.
void save_volume(const std::filesystem::path& path, const Volume& vol);

/// Writes unsigned 8-bit labels.
void save_labels(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace dimshrink
