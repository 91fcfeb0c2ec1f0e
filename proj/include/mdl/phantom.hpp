#pragma once

#include <cstdint>
#include <utility>

#include "mdl/volume.hpp"

namespace mdl {

/// Synthetic head phantom: an ellipsoidal brain cut by a sagittal plane into
/// a contralateral (low-w) and an ipsilateral (high-w) hemisphere, with an
/// optional bright lesion inside the ipsilateral side. Radii and jitters are
/// in voxels.
struct PhantomParams {
  Extents extents{32, 64, 64};
  Spacing spacing{1.0, 0.117, 0.117};

  double background_mean = 0.0;
  double ipsilateral_mean = 1.0;
  double contralateral_mean = 0.8;
  /// Per-phantom Gaussian jitter of each hemisphere mean.
  double hemisphere_sigma = 0.02;
  double noise_sigma = 0.05;

  /// Brain semi-axes as fractions of the extents.
  double axis_fraction_d = 0.38;
  double axis_fraction_h = 0.38;
  double axis_fraction_w = 0.40;
  double axis_jitter = 0.04;    // relative
  double center_jitter = 1.5;   // voxels
  double midline_jitter = 2.0;  // voxels

  double lesion_probability = 1.0;
  double lesion_radius_min = 3.0;  // in-plane; depth radius is half
  double lesion_radius_max = 6.0;
  double lesion_shift = 0.6;

  std::uint64_t seed = 0;

  void validate() const;
};

struct Phantom {
  VolumeGrid volume;
  LabelVolume labels;
  BinaryMask lesion;
};

/// Deterministic in params.seed. Throws std::invalid_argument when the
/// extents cannot hold the brain ellipsoid.
Phantom generate_phantom(const PhantomParams& params);

}  // namespace mdl
