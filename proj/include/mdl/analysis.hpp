#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "mdl/metrics.hpp"
#include "mdl/volume.hpp"

namespace mdl {

// Midline band

/// Brain voxels with an in-plane 4-neighbor in the other hemisphere.
/// Throws DataError when either hemisphere class is absent.
BinaryMask extract_midline(const LabelVolume& labels);

/// `n` dilations with the in-plane 4-connected cross, independently per D slice.
BinaryMask dilate_inplane(const BinaryMask& mask, std::size_t n);
/// `n` erosions with the same cross; voxels outside the volume count as set.
BinaryMask erode_inplane(const BinaryMask& mask, std::size_t n);

struct MidlineDice {
  double ipsilateral = 0.0;
  double contralateral = 0.0;
};

/// Per-class Dice restricted to dilate_inplane(extract_midline(gt), n) and to
/// `slice_filter` when given. Throws DataError if that band is empty.
MidlineDice midline_dice(const LabelVolume& pred, const LabelVolume& gt, std::size_t n,
                         const std::optional<std::set<std::size_t>>& slice_filter = std::nullopt);

// Biomarker

/// Contralateral over ipsilateral volume. Throws DataError if ipsilateral is empty.
double hemispheric_ratio(const LabelVolume& labels);

enum class CohensVariant { pooled, paired };

/// Pooled: (mean_a - mean_b) / s_pooled with sample variances.
/// Paired: mean(a - b) / sd(a - b), requires equal sizes.
/// Throws std::invalid_argument for n < 2 or zero spread.
double cohens_d(std::span<const double> a, std::span<const double> b, CohensVariant variant = CohensVariant::pooled);

using PairStatistic = std::function<double(std::span<const double>, std::span<const double>)>;

struct BootstrapOptions {
  std::size_t resamples = 10000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  /// Replace the bias correction and acceleration by 0.
  bool force_zero_correction = false;
};

struct BootstrapResult {
  double estimate = 0.0;
  double low = 0.0;
  double high = 0.0;
  double z0 = 0.0;
  double acceleration = 0.0;
  std::size_t resamples_used = 0;
  /// All retained resample statistics were identical; the interval collapses to the estimate.
  bool degenerate = false;
};

/// Statistic of each resample, in resample order. Resample b draws the paired
/// indices from its own stream seeded by (seed, b). Non-finite statistics
/// (including ones whose computation throws) are dropped.
std::vector<double> bootstrap_distribution(std::span<const double> a, std::span<const double> b,
                                           const PairStatistic& statistic, std::size_t resamples,
                                           std::uint64_t seed);

/// Linear interpolation between order statistics of sorted values at q in [0,1].
double quantile_sorted(std::span<const double> sorted, double q);

/// Plain percentile interval over the same resample stream.
BootstrapResult percentile_ci(std::span<const double> a, std::span<const double> b, const PairStatistic& statistic,
                              const BootstrapOptions& options);

/// Bias-corrected and accelerated bootstrap interval. Requires resamples >= 1000
/// and equal sample sizes (volumes are resampled as pairs).
BootstrapResult bca_ci(std::span<const double> a, std::span<const double> b, const PairStatistic& statistic,
                       const BootstrapOptions& options);

/// cohens_d (pooled) as a PairStatistic.
PairStatistic cohens_d_statistic(CohensVariant variant = CohensVariant::pooled);

struct BiomarkerResult {
  std::vector<double> gt_ratios;
  std::vector<double> pred_ratios;
  double cohens_d = 0.0;
  BootstrapResult ci;
  double alpha = 0.05;
};

BiomarkerResult biomarker(const std::vector<LabelVolume>& gts, const std::vector<LabelVolume>& preds,
                          const BootstrapOptions& options, CohensVariant variant = CohensVariant::pooled);

// Percentile-threshold baseline and grid search

/// Linearly interpolated percentile of all voxel values, q in [0,1].
double volume_percentile(const VolumeGrid& volume, double q);

/// Largest 6-connected component; ties go to the component met first in raster order.
BinaryMask largest_component(const BinaryMask& mask);

/// Voxels strictly above `threshold`, then closing (alpha in-plane dilations
/// followed by alpha erosions), then the largest 6-connected component.
BinaryMask threshold_segment(const VolumeGrid& volume, double threshold, std::size_t alpha);

/// threshold_segment at the (percentile_index / 100) percentile of the volume.
BinaryMask baseline_threshold_segment(const VolumeGrid& volume, std::size_t percentile_index, std::size_t alpha);

struct GridCell {
  std::size_t percentile_index = 0;
  std::size_t alpha = 0;
  double mean_dice = 0.0;
};

struct GridSearchResult {
  std::vector<GridCell> table;  // percentile-major
  std::size_t best_percentile_index = 0;
  std::size_t best_alpha = 0;
  double best_mean_dice = 0.0;
};

std::vector<std::size_t> default_percentile_grid();  // 1..99
std::vector<std::size_t> default_alpha_grid();       // 0..10

/// Mean brain Dice of baseline_threshold_segment for every grid cell; the
/// best cell is the maximum with ties to the lowest percentile index, then
/// the lowest alpha. Independent of dataset order.
GridSearchResult gridsearch(const std::vector<VolumeGrid>& volumes, const std::vector<LabelVolume>& gts,
                            const std::vector<std::size_t>& percentile_grid = default_percentile_grid(),
                            const std::vector<std::size_t>& alpha_grid = default_alpha_grid());

// Reports

struct MidlineRow {
  std::size_t n = 0;
  double dice_ipsi = 0.0;
  double dice_contra = 0.0;
  double sd_ipsi = 0.0;
  double sd_contra = 0.0;
};

/// n,dice_ipsi,dice_contra,sd_ipsi,sd_contra
void write_midline_csv(const std::vector<MidlineRow>& rows, const std::filesystem::path& path);
/// d,ci_low,ci_high,n_volumes,resamples,alpha,z0,acceleration,degenerate
void write_biomarker_csv(const BiomarkerResult& result, const std::filesystem::path& path);
/// id,gt_ratio,pred_ratio
void write_ratio_csv(const std::vector<std::string>& ids, const BiomarkerResult& result,
                     const std::filesystem::path& path);
/// i,alpha,mean_dice
void write_gridsearch_csv(const GridSearchResult& result, const std::filesystem::path& path);

}  // namespace mdl
