#include "mdl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mdl/csv.hpp"

namespace mdl {

namespace {

void require_same_extents(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (!(a.extents == b.extents)) {
    throw std::invalid_argument(std::string(op) + ": mask extents " + a.extents.str() + " and " + b.extents.str() +
                                " differ");
  }
  if (a.bits.size() != a.extents.voxels() || b.bits.size() != b.extents.voxels()) {
    throw std::invalid_argument(std::string(op) + ": mask size does not match its extents");
  }
}

std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] && b.bits[i]) ? 1 : 0;
  return n;
}

double squared_mm(const Voxel& p, const Voxel& q, const Spacing& s) {
  const double dz = (static_cast<double>(p[0]) - static_cast<double>(q[0])) * s.d;
  const double dy = (static_cast<double>(p[1]) - static_cast<double>(q[1])) * s.h;
  const double dx = (static_cast<double>(p[2]) - static_cast<double>(q[2])) * s.w;
  return dz * dz + dy * dy + dx * dx;
}

// max over p in from of min over q in to, squared.
double directed_squared(const std::vector<Voxel>& from, const std::vector<Voxel>& to, const Spacing& s) {
  double worst = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      best = std::min(best, squared_mm(p, q, s));
      if (best <= worst) break;  // cannot raise the maximum
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_extents(a, b, "dice");
  const std::size_t na = a.count(), nb = b.count();
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection_count(a, b)) / static_cast<double>(na + nb);
}

std::vector<Voxel> boundary_voxels(const BinaryMask& mask) {
  const auto& e = mask.extents;
  std::vector<Voxel> out;
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        if (!mask.at(z, y, x)) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z + 1 == e.d || y + 1 == e.h || x + 1 == e.w;
        if (edge || !mask.at(z - 1, y, x) || !mask.at(z + 1, y, x) || !mask.at(z, y - 1, x) ||
            !mask.at(z, y + 1, x) || !mask.at(z, y, x - 1) || !mask.at(z, y, x + 1)) {
          out.push_back({z, y, x});
        }
      }
  return out;
}

double hausdorff_mm(const BinaryMask& a, const BinaryMask& b, const Spacing& spacing) {
  require_same_extents(a, b, "hausdorff_mm");
  const auto ba = boundary_voxels(a);
  const auto bb = boundary_voxels(b);
  if (ba.empty() || bb.empty()) throw std::invalid_argument("hausdorff_mm: undefined for an empty mask");
  return std::sqrt(std::max(directed_squared(ba, bb, spacing), directed_squared(bb, ba, spacing)));
}

double hausdorff_mm(const BinaryMask& a, const BinaryMask& b) { return hausdorff_mm(a, b, a.spacing); }

PrecisionRecall precision_recall(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_extents(pred, gt, "precision_recall");
  const std::size_t tp = intersection_count(pred, gt);
  const std::size_t np = pred.count(), ng = gt.count();
  PrecisionRecall r;
  if (np == 0) r.precision_undefined = true;
  else r.precision = static_cast<double>(tp) / static_cast<double>(np);
  if (ng == 0) r.recall_undefined = true;
  else r.recall = static_cast<double>(tp) / static_cast<double>(ng);
  return r;
}

std::string region_name(Region r) { return r == Region::brain ? "brain" : "contralateral_hemisphere"; }

BinaryMask restrict_slices(const BinaryMask& mask, const std::set<std::size_t>& slices) {
  BinaryMask out = mask;
  const std::size_t plane = mask.extents.h * mask.extents.w;
  for (std::size_t z = 0; z < mask.extents.d; ++z) {
    if (slices.count(z)) continue;
    std::fill_n(out.bits.begin() + static_cast<std::ptrdiff_t>(z * plane), plane, std::uint8_t{0});
  }
  return out;
}

std::vector<MetricRow> evaluate_volume(const LabelVolume& pred, const LabelVolume& gt,
                                       const std::optional<std::set<std::size_t>>& slice_filter) {
  if (!(pred.extents == gt.extents)) {
    throw DataError("prediction extents " + pred.extents.str() + " differ from ground truth " + gt.extents.str());
  }
  if (!(pred.spacing == gt.spacing)) throw DataError("prediction spacing differs from ground truth spacing");
  if (slice_filter) {
    for (auto z : *slice_filter) {
      if (z >= gt.extents.d) throw DataError("slice filter index " + std::to_string(z) + " outside the volume");
    }
  }
  std::vector<MetricRow> rows;
  for (Region region : {Region::brain, Region::contralateral_hemisphere}) {
    BinaryMask p = region == Region::brain ? brain_mask(pred) : class_mask(pred, kContralateral);
    BinaryMask g = region == Region::brain ? brain_mask(gt) : class_mask(gt, kContralateral);
    if (slice_filter) {
      p = restrict_slices(p, *slice_filter);
      g = restrict_slices(g, *slice_filter);
    }
    MetricRow row;
    row.region = region;
    row.dice = dice(p, g);
    try {
      row.hd_mm = hausdorff_mm(p, g, gt.spacing);
    } catch (const std::invalid_argument&) {
      throw DataError("Hausdorff distance undefined: empty " + region_name(region) + " mask");
    }
    const auto pr = precision_recall(p, g);
    row.precision = pr.precision;
    row.recall = pr.recall;
    row.precision_undefined = pr.precision_undefined;
    rows.push_back(row);
  }
  return rows;
}

std::pair<double, double> mean_sd(const std::vector<double>& values) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (values.empty()) return {nan, nan};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, nan};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

void write_metrics_csv(const std::vector<VolumeMetrics>& results, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"id", "region", "dice", "hd_mm", "precision", "recall", "precision_undefined"};
  for (const auto& vm : results) {
    for (const auto& r : vm.rows) {
      t.rows.push_back({vm.id, region_name(r.region), csv::format(r.dice), csv::format(r.hd_mm),
                        csv::format(r.precision), csv::format(r.recall), r.precision_undefined ? "1" : "0"});
    }
  }
  for (Region region : {Region::brain, Region::contralateral_hemisphere}) {
    std::vector<double> d, h, p, r;
    for (const auto& vm : results)
      for (const auto& row : vm.rows) {
        if (row.region != region) continue;
        d.push_back(row.dice);
        h.push_back(row.hd_mm);
        p.push_back(row.precision);
        r.push_back(row.recall);
      }
    if (d.empty()) continue;
    const auto md = mean_sd(d), mh = mean_sd(h), mp = mean_sd(p), mr = mean_sd(r);
    t.rows.push_back({"mean", region_name(region), csv::format(md.first), csv::format(mh.first),
                      csv::format(mp.first), csv::format(mr.first), ""});
    t.rows.push_back({"sd", region_name(region), csv::format(md.second), csv::format(mh.second),
                      csv::format(mp.second), csv::format(mr.second), ""});
  }
  csv::write(t, path);
}

}  // namespace mdl
