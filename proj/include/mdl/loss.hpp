#pragma once

#include <vector>

#include "mdl/network.hpp"
#include "mdl/tensor.hpp"
#include "mdl/volume.hpp"

namespace mdl {

/// Exact one-hot encoding p[n, c, voxel] of a label volume, shape [1, C, D, H, W].
struct OneHotTarget {
  Shape shape;
  std::vector<double> values;

  static OneHotTarget from_labels(const LabelVolume& labels, std::size_t num_classes = kNumClasses);
};

inline constexpr double kDefaultClampFloor = 1e-7;
inline constexpr double kDefaultDiceSmooth = 1e-6;

/// L = -(1/(N*C)) sum_i sum_c p log(max(q, floor)), N = voxel count.
Tensor cross_entropy(const Tensor& probs, const OneHotTarget& target, double clamp_floor = kDefaultClampFloor);

/// L = 1 - (2/C) sum_c [sum_i p q] / [sum_i (p^2 + q^2) + smooth].
Tensor dice_loss(const Tensor& probs, const OneHotTarget& target, double smooth = kDefaultDiceSmooth);

/// Majority label over each factor^3 block; ties go to the lower class index.
LabelVolume downsample_label_volume(const LabelVolume& labels, std::size_t factor);
OneHotTarget downsample_labels(const LabelVolume& labels, std::size_t factor,
                               std::size_t num_classes = kNumClasses);

struct LossTerms {
  Tensor total;
  /// One entry per output: main head first, then the auxiliary heads.
  std::vector<double> cross_entropy;
  std::vector<double> dice;
};

/// Unweighted sum of cross-entropy + Dice over the main and auxiliary heads,
/// each auxiliary head scored against labels downsampled to its resolution.
LossTerms deep_supervision_loss(const SegmentationOutput& output, const LabelVolume& labels,
                                double clamp_floor = kDefaultClampFloor, double smooth = kDefaultDiceSmooth);

}  // namespace mdl
