#include <algorithm>
#include <stdexcept>

#include "mdl/analysis.hpp"
#include "mdl/csv.hpp"

namespace mdl {

namespace {

double percentile_of_sorted(const std::vector<double>& sorted, std::size_t index) {
  return quantile_sorted(sorted, static_cast<double>(index) / 100.0);
}

BinaryMask above(const VolumeGrid& volume, double threshold) {
  BinaryMask m = BinaryMask::empty(volume.extents, volume.spacing);
  for (std::size_t i = 0; i < volume.values.size(); ++i) m.bits[i] = volume.values[i] > threshold ? 1 : 0;
  return m;
}

void check_index(std::size_t percentile_index, std::size_t alpha) {
  if (percentile_index < 1 || percentile_index > 99) {
    throw std::invalid_argument("percentile index must lie in 1..99");
  }
  if (alpha > 10) throw std::invalid_argument("alpha must lie in 0..10");
}

}  // namespace

double volume_percentile(const VolumeGrid& volume, double q) {
  std::vector<double> sorted = volume.values;
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

BinaryMask largest_component(const BinaryMask& mask) {
  const auto& e = mask.extents;
  const std::size_t n = e.voxels();
  std::vector<std::uint32_t> comp(n, 0);
  std::vector<std::size_t> stack;
  std::uint32_t next = 0, best = 0;
  std::size_t best_size = 0;
  const std::size_t plane = e.h * e.w;
  for (std::size_t start = 0; start < n; ++start) {
    if (!mask.bits[start] || comp[start]) continue;
    const std::uint32_t id = ++next;
    std::size_t size = 0;
    comp[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t z = v / plane, y = (v / e.w) % e.h, x = v % e.w;
      auto visit = [&](std::size_t u) {
        if (mask.bits[u] && !comp[u]) {
          comp[u] = id;
          stack.push_back(u);
        }
      };
      if (z > 0) visit(v - plane);
      if (z + 1 < e.d) visit(v + plane);
      if (y > 0) visit(v - e.w);
      if (y + 1 < e.h) visit(v + e.w);
      if (x > 0) visit(v - 1);
      if (x + 1 < e.w) visit(v + 1);
    }
    if (size > best_size) {
      best_size = size;
      best = id;
    }
  }
  BinaryMask out = BinaryMask::empty(e, mask.spacing);
  if (best == 0) return out;
  for (std::size_t i = 0; i < n; ++i) out.bits[i] = comp[i] == best ? 1 : 0;
  return out;
}

BinaryMask threshold_segment(const VolumeGrid& volume, double threshold, std::size_t alpha) {
  return largest_component(erode_inplane(dilate_inplane(above(volume, threshold), alpha), alpha));
}

BinaryMask baseline_threshold_segment(const VolumeGrid& volume, std::size_t percentile_index, std::size_t alpha) {
  check_index(percentile_index, alpha);
  return threshold_segment(volume, volume_percentile(volume, static_cast<double>(percentile_index) / 100.0), alpha);
}

std::vector<std::size_t> default_percentile_grid() {
  std::vector<std::size_t> g;
  for (std::size_t i = 1; i <= 99; ++i) g.push_back(i);
  return g;
}

std::vector<std::size_t> default_alpha_grid() {
  std::vector<std::size_t> g;
  for (std::size_t a = 0; a <= 10; ++a) g.push_back(a);
  return g;
}

GridSearchResult gridsearch(const std::vector<VolumeGrid>& volumes, const std::vector<LabelVolume>& gts,
                            const std::vector<std::size_t>& percentile_grid,
                            const std::vector<std::size_t>& alpha_grid) {
  if (volumes.empty()) throw std::invalid_argument("gridsearch needs at least one volume");
  if (volumes.size() != gts.size()) throw std::invalid_argument("gridsearch needs one label volume per volume");
  if (percentile_grid.empty() || alpha_grid.empty()) throw std::invalid_argument("gridsearch grid is empty");
  for (auto i : percentile_grid)
    for (auto a : alpha_grid) check_index(i, a);
  const std::size_t max_alpha = *std::max_element(alpha_grid.begin(), alpha_grid.end());

  // scores[cell][volume]
  std::vector<std::vector<double>> scores(percentile_grid.size() * alpha_grid.size());
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    if (!(volumes[v].extents == gts[v].extents)) {
      throw DataError("gridsearch: volume " + std::to_string(v) + " and its labels differ in extents");
    }
    std::vector<double> sorted = volumes[v].values;
    std::sort(sorted.begin(), sorted.end());
    const BinaryMask truth = brain_mask(gts[v]);
    for (std::size_t pi = 0; pi < percentile_grid.size(); ++pi) {
      std::vector<BinaryMask> dilated{above(volumes[v], percentile_of_sorted(sorted, percentile_grid[pi]))};
      for (std::size_t k = 1; k <= max_alpha; ++k) dilated.push_back(dilate_inplane(dilated.back(), 1));
      for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
        const std::size_t a = alpha_grid[ai];
        const BinaryMask seg = largest_component(erode_inplane(dilated[a], a));
        scores[pi * alpha_grid.size() + ai].push_back(dice(seg, truth));
      }
    }
  }

  GridSearchResult r;
  bool first = true;
  for (std::size_t pi = 0; pi < percentile_grid.size(); ++pi)
    for (std::size_t ai = 0; ai < alpha_grid.size(); ++ai) {
      auto s = scores[pi * alpha_grid.size() + ai];
      std::sort(s.begin(), s.end());
      double sum = 0.0;
      for (double x : s) sum += x;
      const GridCell cell{percentile_grid[pi], alpha_grid[ai], sum / static_cast<double>(s.size())};
      r.table.push_back(cell);
      const bool better = cell.mean_dice > r.best_mean_dice ||
                          (cell.mean_dice == r.best_mean_dice &&
                           (cell.percentile_index < r.best_percentile_index ||
                            (cell.percentile_index == r.best_percentile_index && cell.alpha < r.best_alpha)));
      if (first || better) {
        r.best_percentile_index = cell.percentile_index;
        r.best_alpha = cell.alpha;
        r.best_mean_dice = cell.mean_dice;
        first = false;
      }
    }
  return r;
}

void write_gridsearch_csv(const GridSearchResult& result, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"i", "alpha", "mean_dice"};
  for (const auto& c : result.table) {
    t.rows.push_back({std::to_string(c.percentile_index), std::to_string(c.alpha), csv::format(c.mean_dice)});
  }
  csv::write(t, path);
}

}  // namespace mdl
