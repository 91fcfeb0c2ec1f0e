#pragma once

#include <filesystem>

#include "mdl/volume.hpp"

namespace mdl {

// Single-file NIfTI-1 (.nii), uncompressed, little-endian. Intensity volumes
// are stored as float32 (datatype 16), label volumes as uint8 (datatype 2).
// Array axis order on disk is (i, j, k) = (width, height, depth) with i
// fastest, matching the in-memory layout; pixdim[1..3] = (w, h, d) spacing.

/// Writes float32 values; doubles are rounded to the nearest float.
void write_volume(const VolumeGrid& grid, const std::filesystem::path& path);
/// Accepts float32 or uint8 data. Throws DataError on any malformed header,
/// truncated payload, or NaN voxel.
VolumeGrid read_volume(const std::filesystem::path& path);

void write_labels(const LabelVolume& labels, const std::filesystem::path& path);
/// Requires uint8 data with values in {0,1,2}.
LabelVolume read_labels(const std::filesystem::path& path);

}  // namespace mdl
