#include "mdl/preprocess.hpp"

#include <cmath>

namespace mdl {

VolumeGrid standardize(const VolumeGrid& grid) {
  grid.validate();
  const auto n = static_cast<double>(grid.values.size());
  double sum = 0.0;
  for (double v : grid.values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : grid.values) ss += (v - mean) * (v - mean);
  const double var = ss / n;
  if (!(var > 0.0)) throw DataError("cannot standardize a constant volume (zero variance)");
  const double inv = 1.0 / std::sqrt(var);
  VolumeGrid out = grid;
  for (double& v : out.values) v = (v - mean) * inv;
  return out;
}

LabelVolume derive_regions(const BinaryMask& brain, const BinaryMask& contralateral) {
  if (!(brain.extents == contralateral.extents)) {
    throw DataError("derive_regions: extent mismatch " + brain.extents.str() + " vs " + contralateral.extents.str());
  }
  std::size_t outside = 0;
  for (std::size_t i = 0; i < brain.bits.size(); ++i) outside += contralateral.bits[i] && !brain.bits[i];
  if (outside > 0) {
    throw DataError("derive_regions: " + std::to_string(outside) +
                    " contralateral voxels lie outside the brain mask");
  }
  LabelVolume labels = LabelVolume::filled(brain.extents, brain.spacing);
  for (std::size_t i = 0; i < brain.bits.size(); ++i) {
    if (contralateral.bits[i]) {
      labels.labels[i] = kContralateral;
    } else if (brain.bits[i]) {
      labels.labels[i] = kIpsilateral;
    }
  }
  return labels;
}

}  // namespace mdl
