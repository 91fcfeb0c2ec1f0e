#include "mdl/phantom.hpp"

#include <cmath>
#include <random>

#include "mdl/preprocess.hpp"

namespace mdl {

void PhantomParams::validate() const {
  if (extents.voxels() == 0) throw std::invalid_argument("phantom extents must be positive");
  if (!(spacing.d > 0 && spacing.h > 0 && spacing.w > 0)) throw std::invalid_argument("phantom spacing must be positive");
  if (noise_sigma < 0 || hemisphere_sigma < 0) throw std::invalid_argument("phantom sigmas must be >= 0");
  if (lesion_probability < 0 || lesion_probability > 1) throw std::invalid_argument("lesion probability must be in [0,1]");
  if (lesion_radius_min <= 0 || lesion_radius_max < lesion_radius_min) {
    throw std::invalid_argument("lesion radius range must satisfy 0 < min <= max");
  }
  for (double f : {axis_fraction_d, axis_fraction_h, axis_fraction_w}) {
    if (!(f > 0 && f < 0.5)) throw std::invalid_argument("brain axis fractions must lie in (0, 0.5)");
  }
}

Phantom generate_phantom(const PhantomParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Extents e = p.extents;

  const double cd = (static_cast<double>(e.d) - 1.0) / 2.0 + p.center_jitter * unit(rng);
  const double ch = (static_cast<double>(e.h) - 1.0) / 2.0 + p.center_jitter * unit(rng);
  const double cw = (static_cast<double>(e.w) - 1.0) / 2.0 + p.center_jitter * unit(rng);
  const double ad = p.axis_fraction_d * static_cast<double>(e.d) * (1.0 + p.axis_jitter * unit(rng));
  const double ah = p.axis_fraction_h * static_cast<double>(e.h) * (1.0 + p.axis_jitter * unit(rng));
  const double aw = p.axis_fraction_w * static_cast<double>(e.w) * (1.0 + p.axis_jitter * unit(rng));

  // The ellipsoid must leave at least one background voxel on every face.
  const auto fits = [](double c, double a, std::size_t n) {
    return a >= 2.0 && c - a >= 0.5 && c + a <= static_cast<double>(n) - 1.5;
  };
  if (!fits(cd, ad, e.d) || !fits(ch, ah, e.h) || !fits(cw, aw, e.w)) {
    throw std::invalid_argument("phantom extents " + e.str() + " too small to contain the brain ellipsoid");
  }
  const double midline = std::round(cw + p.midline_jitter * unit(rng));
  const double ipsi_mean = p.ipsilateral_mean + p.hemisphere_sigma * gauss(rng);
  const double contra_mean = p.contralateral_mean + p.hemisphere_sigma * gauss(rng);

  BinaryMask brain = BinaryMask::empty(e, p.spacing);
  BinaryMask contra = BinaryMask::empty(e, p.spacing);
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        const double u = (static_cast<double>(z) - cd) / ad;
        const double v = (static_cast<double>(y) - ch) / ah;
        const double w = (static_cast<double>(x) - cw) / aw;
        if (u * u + v * v + w * w > 1.0) continue;
        const auto i = e.index(z, y, x);
        brain.bits[i] = 1;
        contra.bits[i] = static_cast<double>(x) < midline;
      }
  LabelVolume labels = derive_regions(brain, contra);

  BinaryMask lesion = BinaryMask::empty(e, p.spacing);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < p.lesion_probability) {
    std::uniform_real_distribution<double> radius(p.lesion_radius_min, p.lesion_radius_max);
    const double r = radius(rng);
    const double rd = std::max(1.0, r / 2.0);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double lz = cd + ad * unit(rng);
      const double ly = ch + ah * unit(rng);
      const double lx = midline + (cw + aw - midline) * 0.5 * (1.0 + unit(rng));
      BinaryMask candidate = BinaryMask::empty(e, p.spacing);
      bool inside = true;
      for (std::size_t z = 0; z < e.d && inside; ++z)
        for (std::size_t y = 0; y < e.h && inside; ++y)
          for (std::size_t x = 0; x < e.w; ++x) {
            const double u = (static_cast<double>(z) - lz) / rd;
            const double v = (static_cast<double>(y) - ly) / r;
            const double w = (static_cast<double>(x) - lx) / r;
            if (u * u + v * v + w * w > 1.0) continue;
            const auto i = e.index(z, y, x);
            if (labels.labels[i] != kIpsilateral) {
              inside = false;
              break;
            }
            candidate.bits[i] = 1;
          }
      // Strictly inside: every lesion voxel is ipsilateral and none touches
      // the midline or the brain surface.
      if (inside && candidate.count() > 0) {
        for (std::size_t z = 0; z < e.d && inside; ++z)
          for (std::size_t y = 0; y < e.h && inside; ++y)
            for (std::size_t x = 0; x < e.w && inside; ++x) {
              if (!candidate.at(z, y, x)) continue;
              const auto check = [&](long dz, long dy, long dx) {
                const long zz = static_cast<long>(z) + dz, yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                if (zz < 0 || yy < 0 || xx < 0 || zz >= static_cast<long>(e.d) || yy >= static_cast<long>(e.h) ||
                    xx >= static_cast<long>(e.w)) {
                  return false;
                }
                return labels.at(static_cast<std::size_t>(zz), static_cast<std::size_t>(yy),
                                 static_cast<std::size_t>(xx)) == kIpsilateral;
              };
              inside = check(1, 0, 0) && check(-1, 0, 0) && check(0, 1, 0) && check(0, -1, 0) &&
                       check(0, 0, 1) && check(0, 0, -1);
            }
      }
      if (inside && candidate.count() > 0) {
        lesion = std::move(candidate);
        placed = true;
      }
    }
    if (!placed) throw std::invalid_argument("could not place a lesion strictly inside the ipsilateral hemisphere");
  }

  VolumeGrid volume = VolumeGrid::filled(e, p.spacing);
  for (std::size_t i = 0; i < volume.values.size(); ++i) {
    double v = p.background_mean;
    if (labels.labels[i] == kIpsilateral) v = ipsi_mean;
    if (labels.labels[i] == kContralateral) v = contra_mean;
    if (lesion.bits[i]) v += p.lesion_shift;
    if (p.noise_sigma > 0) v += p.noise_sigma * gauss(rng);
    volume.values[i] = v;
  }
  return {std::move(volume), std::move(labels), std::move(lesion)};
}

}  // namespace mdl
