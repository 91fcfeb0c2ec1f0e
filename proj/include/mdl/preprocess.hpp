#pragma once

#include "mdl/volume.hpp"

namespace mdl {

/// Zero mean, unit population variance over every voxel of the volume.
/// Throws DataError for a constant volume.
VolumeGrid standardize(const VolumeGrid& grid);

/// Contralateral voxels -> 2, remaining brain voxels -> 1, everything else -> 0.
/// Throws DataError if any contralateral voxel lies outside the brain mask.
LabelVolume derive_regions(const BinaryMask& brain, const BinaryMask& contralateral);

}  // namespace mdl
