#include "mdl/volume.hpp"

#include <algorithm>
#include <cmath>

namespace mdl {

namespace {

void require_same_extents(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (!(a.extents == b.extents)) {
    throw std::invalid_argument(std::string(op) + ": extent mismatch " + a.extents.str() + " vs " +
                                b.extents.str());
  }
}

}  // namespace

std::string Extents::str() const {
  return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

VolumeGrid VolumeGrid::filled(Extents e, Spacing s, double value) {
  VolumeGrid g;
  g.extents = e;
  g.spacing = s;
  g.values.assign(e.voxels(), value);
  return g;
}

void VolumeGrid::validate() const {
  if (extents.voxels() == 0) throw DataError("volume has zero extent " + extents.str());
  if (values.size() != extents.voxels()) {
    throw DataError("volume holds " + std::to_string(values.size()) + " values for extents " + extents.str());
  }
  if (!(spacing.d > 0.0 && spacing.h > 0.0 && spacing.w > 0.0)) {
    throw DataError("volume spacing must be strictly positive");
  }
}

LabelVolume LabelVolume::filled(Extents e, Spacing s, std::uint8_t label) {
  LabelVolume l;
  l.extents = e;
  l.spacing = s;
  l.labels.assign(e.voxels(), label);
  return l;
}

std::size_t LabelVolume::count(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void LabelVolume::validate() const {
  if (extents.voxels() == 0) throw DataError("label volume has zero extent " + extents.str());
  if (labels.size() != extents.voxels()) {
    throw DataError("label volume holds " + std::to_string(labels.size()) + " labels for extents " +
                    extents.str());
  }
  if (!(spacing.d > 0.0 && spacing.h > 0.0 && spacing.w > 0.0)) {
    throw DataError("label volume spacing must be strictly positive");
  }
  const auto bad = std::count_if(labels.begin(), labels.end(), [](std::uint8_t l) { return l > kContralateral; });
  if (bad > 0) throw DataError(std::to_string(bad) + " voxels carry labels outside {0,1,2}");
}

BinaryMask BinaryMask::empty(Extents e, Spacing s) {
  BinaryMask m;
  m.extents = e;
  m.spacing = s;
  m.bits.assign(e.voxels(), 0);
  return m;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BinaryMask brain_mask(const LabelVolume& labels) {
  BinaryMask m = BinaryMask::empty(labels.extents, labels.spacing);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = labels.labels[i] != kBackground;
  return m;
}

BinaryMask class_mask(const LabelVolume& labels, std::uint8_t label) {
  BinaryMask m = BinaryMask::empty(labels.extents, labels.spacing);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = labels.labels[i] == label;
  return m;
}

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  require_same_extents(a, b, "mask_and");
  BinaryMask m = a;
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = a.bits[i] & b.bits[i];
  return m;
}

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  require_same_extents(a, b, "mask_or");
  BinaryMask m = a;
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = a.bits[i] | b.bits[i];
  return m;
}

bool mask_subset(const BinaryMask& inner, const BinaryMask& outer) {
  require_same_extents(inner, outer, "mask_subset");
  for (std::size_t i = 0; i < inner.bits.size(); ++i) {
    if (inner.bits[i] && !outer.bits[i]) return false;
  }
  return true;
}

}  // namespace mdl
