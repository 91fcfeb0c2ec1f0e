#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mdl/volume.hpp"

namespace mdl {

using Voxel = std::array<std::size_t, 3>;  // (z, y, x)

/// 2|A∩B| / (|A| + |B|); two empty masks score 1.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Mask voxels with a face neighbor outside the mask or outside the volume,
/// in raster order.
std::vector<Voxel> boundary_voxels(const BinaryMask& mask);

/// Symmetric Hausdorff distance between the boundary sets, with offsets
/// scaled by `spacing` (mm). Throws std::invalid_argument on an empty mask.
double hausdorff_mm(const BinaryMask& a, const BinaryMask& b, const Spacing& spacing);
double hausdorff_mm(const BinaryMask& a, const BinaryMask& b);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  /// Set when TP + FP = 0 (precision reported as 0).
  bool precision_undefined = false;
  /// Set when TP + FN = 0 (recall reported as 0).
  bool recall_undefined = false;
};

PrecisionRecall precision_recall(const BinaryMask& pred, const BinaryMask& gt);

enum class Region { brain, contralateral_hemisphere };
std::string region_name(Region r);

struct MetricRow {
  Region region = Region::brain;
  double dice = 0.0;
  double hd_mm = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;
};

/// Zeroes every voxel whose D-index is not in `slices`.
BinaryMask restrict_slices(const BinaryMask& mask, const std::set<std::size_t>& slices);

/// Brain and contralateral rows. With a slice filter both masks are first
/// restricted to the listed D-indices.
std::vector<MetricRow> evaluate_volume(const LabelVolume& pred, const LabelVolume& gt,
                                       const std::optional<std::set<std::size_t>>& slice_filter = std::nullopt);

struct VolumeMetrics {
  std::string id;
  std::vector<MetricRow> rows;
};

/// id,region,dice,hd_mm,precision,recall,precision_undefined followed by
/// mean and sample-SD summary rows per region.
void write_metrics_csv(const std::vector<VolumeMetrics>& results, const std::filesystem::path& path);

/// Mean and sample standard deviation (n-1); SD is NaN for fewer than 2 values.
std::pair<double, double> mean_sd(const std::vector<double>& values);

}  // namespace mdl
