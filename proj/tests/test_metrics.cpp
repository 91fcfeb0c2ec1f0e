#include <doctest.h>

#include <filesystem>

#include "mdl/csv.hpp"
#include "mdl/metrics.hpp"
#include "mdl/phantom.hpp"
#include "oracles.hpp"

using namespace mdl;

namespace {

const Spacing kAniso{1.0, 0.117, 0.117};

BinaryMask single(Extents e, Spacing s, std::size_t z, std::size_t y, std::size_t x) {
  BinaryMask m = BinaryMask::empty(e, s);
  m.bits[e.index(z, y, x)] = 1;
  return m;
}

}  // namespace

TEST_CASE("dice trivial cases") {
  const Extents e{1, 1, 4};
  BinaryMask a = BinaryMask::empty(e, {}), b = BinaryMask::empty(e, {});
  CHECK(dice(a, b) == 1.0);
  a.bits = {1, 1, 0, 0};
  CHECK(dice(a, a) == 1.0);
  b.bits = {0, 0, 1, 1};
  CHECK(dice(a, b) == 0.0);
  b.bits = {0, 1, 1, 0};
  CHECK(dice(a, b) == 0.5);
  CHECK_THROWS(dice(a, BinaryMask::empty({1, 2, 2}, {})));
}

TEST_CASE("boundary voxels") {
  CHECK(boundary_voxels(single({3, 3, 3}, {}, 1, 1, 1)).size() == 1);
  BinaryMask cube = BinaryMask::empty({5, 5, 5}, {});
  for (std::size_t z = 1; z < 4; ++z)
    for (std::size_t y = 1; y < 4; ++y)
      for (std::size_t x = 1; x < 4; ++x) cube.bits[cube.extents.index(z, y, x)] = 1;
  const auto b = boundary_voxels(cube);
  CHECK(b.size() == 26);
  CHECK(std::find(b.begin(), b.end(), Voxel{2, 2, 2}) == b.end());
  CHECK(boundary_voxels(BinaryMask::empty({2, 2, 2}, {})).empty());
  BinaryMask full = BinaryMask::empty({3, 3, 3}, {});
  std::fill(full.bits.begin(), full.bits.end(), 1);
  CHECK(boundary_voxels(full).size() == 26);  // volume edges count as outside
}

TEST_CASE("hausdorff hand values with anisotropic spacing") {
  const Extents e{3, 3, 3};
  CHECK(hausdorff_mm(single(e, kAniso, 1, 1, 1), single(e, kAniso, 1, 1, 2), kAniso) == 0.117);
  CHECK(hausdorff_mm(single(e, kAniso, 1, 1, 1), single(e, kAniso, 1, 2, 1), kAniso) == 0.117);
  CHECK(hausdorff_mm(single(e, kAniso, 1, 1, 1), single(e, kAniso, 2, 1, 1), kAniso) == 1.0);
  const BinaryMask a = single(e, kAniso, 0, 0, 0);
  CHECK(hausdorff_mm(a, a) == 0.0);
  CHECK_THROWS_AS(hausdorff_mm(a, BinaryMask::empty(e, kAniso)), std::invalid_argument);
}

TEST_CASE("hausdorff equals the all-pairs oracle on random masks") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> density(0.05, 0.6);
  for (int trial = 0; trial < 100; ++trial) {
    const Spacing s = trial % 2 ? kAniso : Spacing{};
    BinaryMask a = oracle::random_mask(rng, {8, 8, 8}, s, density(rng));
    BinaryMask b = oracle::random_mask(rng, {8, 8, 8}, s, density(rng));
    a.bits[0] = 1;
    b.bits[511] = 1;
    const double h = hausdorff_mm(a, b, s);
    CHECK(h == oracle::hausdorff(a, b, s));
    CHECK(h == hausdorff_mm(b, a, s));
    CHECK(dice(a, b) == oracle::dice(a, b));
    CHECK(dice(a, b) == dice(b, a));
    const auto pr = precision_recall(a, b);
    const auto c = oracle::counts(a, b);
    CHECK(pr.precision == double(c.tp) / double(c.tp + c.fp));
    CHECK(pr.recall == double(c.tp) / double(c.tp + c.fn));
  }
}

TEST_CASE("unit-spacing hausdorff equals the lattice Euclidean distance") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    BinaryMask a = oracle::random_mask(rng, {6, 6, 6}, {}, 0.3), b = oracle::random_mask(rng, {6, 6, 6}, {}, 0.3);
    a.bits[7] = 1;
    b.bits[100] = 1;
    const double h = hausdorff_mm(a, b, {});
    const double sq = h * h;
    CHECK(std::abs(sq - std::round(sq)) < 1e-9);
  }
}

TEST_CASE("precision and recall conventions") {
  const Extents e{1, 1, 10};
  BinaryMask pred = BinaryMask::empty(e, {}), gt = BinaryMask::empty(e, {});
  for (int i = 0; i < 10; ++i) pred.bits[i] = 1;
  for (int i = 0; i < 8; ++i) gt.bits[i] = 1;
  auto pr = precision_recall(pred, gt);
  CHECK(pr.precision == 0.8);
  CHECK(pr.recall == 1.0);
  pr = precision_recall(gt, gt);
  CHECK((pr.precision == 1.0 && pr.recall == 1.0));
  pr = precision_recall(BinaryMask::empty(e, {}), gt);
  CHECK(pr.precision == 0.0);
  CHECK(pr.precision_undefined);
  CHECK(pr.recall == 0.0);
  CHECK_FALSE(pr.recall_undefined);
}

TEST_CASE("precision, recall and dice are all one exactly when masks match") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    BinaryMask a = oracle::random_mask(rng, {3, 3, 3}, {}, 0.5), b = a;
    a.bits[0] = 1;
    if (trial % 2) b = a;
    else b.bits[0] = 0;
    const auto pr = precision_recall(a, b);
    const bool all_one = pr.precision == 1.0 && pr.recall == 1.0 && dice(a, b) == 1.0;
    CHECK(all_one == (a == b));
  }
}

TEST_CASE("evaluate_volume") {
  PhantomParams pp;
  const Phantom ph = generate_phantom(pp);
  const auto self = evaluate_volume(ph.labels, ph.labels);
  REQUIRE(self.size() == 2);
  for (const auto& r : self) {
    CHECK(r.dice == 1.0);
    CHECK(r.hd_mm == 0.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
  }
  pp.seed = 3;
  const Phantom other = generate_phantom(pp);
  const auto rows = evaluate_volume(other.labels, ph.labels);
  std::set<std::size_t> all;
  for (std::size_t z = 0; z < 32; ++z) all.insert(z);
  const auto filtered = evaluate_volume(other.labels, ph.labels, all);
  for (int k = 0; k < 2; ++k) {
    CHECK(rows[k].dice == filtered[k].dice);
    CHECK(rows[k].hd_mm == filtered[k].hd_mm);
  }
  const BinaryMask pb = brain_mask(other.labels), gb = brain_mask(ph.labels);
  CHECK(rows[0].dice == dice(pb, gb));
  CHECK(rows[0].hd_mm == hausdorff_mm(pb, gb, ph.labels.spacing));
  CHECK(rows[1].precision == precision_recall(class_mask(other.labels, 2), class_mask(ph.labels, 2)).precision);

  const std::set<std::size_t> some{10, 11, 12};
  const auto part = evaluate_volume(other.labels, ph.labels, some);
  CHECK(part[0].dice == dice(restrict_slices(pb, some), restrict_slices(gb, some)));
  CHECK_THROWS_AS(evaluate_volume(other.labels, LabelVolume::filled({2, 2, 2}, pp.spacing)), DataError);
}

TEST_CASE("metrics report carries mean and sample SD rows") {
  std::vector<VolumeMetrics> res{{"a", {{Region::brain, 0.8, 1.0, 0.9, 0.7, false}}},
                                 {"b", {{Region::brain, 1.0, 3.0, 0.9, 0.9, false}}}};
  const auto path = std::filesystem::temp_directory_path() / "mdl_metrics_test.csv";
  write_metrics_csv(res, path);
  const auto t = csv::read(path);
  CHECK(t.header == csv::Row{"id", "region", "dice", "hd_mm", "precision", "recall", "precision_undefined"});
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[2][0] == "mean");
  CHECK(std::stod(t.rows[2][2]) == doctest::Approx(0.9));
  CHECK(std::stod(t.rows[3][3]) == doctest::Approx(std::sqrt(2.0)));
  std::filesystem::remove(path);
  const auto ms = mean_sd({1.0, 2.0, 3.0});
  CHECK(ms.first == 2.0);
  CHECK(ms.second == 1.0);
}
