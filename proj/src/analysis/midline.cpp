#include <stdexcept>

#include "mdl/analysis.hpp"

namespace mdl {

BinaryMask extract_midline(const LabelVolume& labels) {
  if (labels.count(kIpsilateral) == 0 || labels.count(kContralateral) == 0) {
    throw DataError("midline needs both hemisphere classes present");
  }
  const auto& e = labels.extents;
  BinaryMask out = BinaryMask::empty(e, labels.spacing);
  auto other = [&](std::uint8_t c, std::size_t z, std::size_t y, std::size_t x) {
    const std::uint8_t v = labels.at(z, y, x);
    return (c == kIpsilateral && v == kContralateral) || (c == kContralateral && v == kIpsilateral);
  };
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        const std::uint8_t c = labels.at(z, y, x);
        if (c != kIpsilateral && c != kContralateral) continue;
        if ((y > 0 && other(c, z, y - 1, x)) || (y + 1 < e.h && other(c, z, y + 1, x)) ||
            (x > 0 && other(c, z, y, x - 1)) || (x + 1 < e.w && other(c, z, y, x + 1))) {
          out.bits[e.index(z, y, x)] = 1;
        }
      }
  return out;
}

namespace {

// One in-plane cross pass. Dilation ORs the neighborhood with outside = 0;
// erosion ANDs it with outside = 1.
BinaryMask cross_pass(const BinaryMask& m, bool dilate) {
  const auto& e = m.extents;
  BinaryMask out = m;
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        const bool up = y > 0 ? m.at(z, y - 1, x) : !dilate;
        const bool down = y + 1 < e.h ? m.at(z, y + 1, x) : !dilate;
        const bool left = x > 0 ? m.at(z, y, x - 1) : !dilate;
        const bool right = x + 1 < e.w ? m.at(z, y, x + 1) : !dilate;
        const bool self = m.at(z, y, x);
        const bool v = dilate ? (self || up || down || left || right) : (self && up && down && left && right);
        out.bits[e.index(z, y, x)] = v ? 1 : 0;
      }
  return out;
}

}  // namespace

BinaryMask dilate_inplane(const BinaryMask& mask, std::size_t n) {
  BinaryMask out = mask;
  for (std::size_t i = 0; i < n; ++i) out = cross_pass(out, true);
  return out;
}

BinaryMask erode_inplane(const BinaryMask& mask, std::size_t n) {
  BinaryMask out = mask;
  for (std::size_t i = 0; i < n; ++i) out = cross_pass(out, false);
  return out;
}

MidlineDice midline_dice(const LabelVolume& pred, const LabelVolume& gt, std::size_t n,
                         const std::optional<std::set<std::size_t>>& slice_filter) {
  if (!(pred.extents == gt.extents)) {
    throw DataError("prediction extents " + pred.extents.str() + " differ from ground truth " + gt.extents.str());
  }
  BinaryMask band = dilate_inplane(extract_midline(gt), n);
  if (slice_filter) band = restrict_slices(band, *slice_filter);
  if (band.count() == 0) throw DataError("midline band is empty");
  auto banded = [&](const LabelVolume& l, std::uint8_t c) { return mask_and(class_mask(l, c), band); };
  return {dice(banded(pred, kIpsilateral), banded(gt, kIpsilateral)),
          dice(banded(pred, kContralateral), banded(gt, kContralateral))};
}

}  // namespace mdl
