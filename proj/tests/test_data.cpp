#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include "mdl/csv.hpp"
#include "mdl/dataset.hpp"
#include "mdl/nifti.hpp"
#include "mdl/phantom.hpp"
#include "mdl/preprocess.hpp"

using namespace mdl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("mdl_data_" + std::to_string(std::random_device{}()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

VolumeGrid random_grid(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> ext(1, 9);
  const Extents e{ext(rng), ext(rng), ext(rng)};
  std::uniform_real_distribution<double> sp(0.05, 3.0), val(-1e3, 1e3);
  VolumeGrid g = VolumeGrid::filled(e, {sp(rng), sp(rng), sp(rng)});
  for (auto& v : g.values) v = static_cast<float>(val(rng));
  return g;
}

}  // namespace

TEST_CASE("volume and label files roundtrip on random grids") {
  TempDir dir;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const VolumeGrid g = random_grid(rng);
    write_volume(g, dir.path / "v.nii");
    const VolumeGrid r = read_volume(dir.path / "v.nii");
    CHECK(r.extents == g.extents);
    CHECK(r.values == g.values);
    CHECK(r.spacing.d == static_cast<float>(g.spacing.d));
    CHECK(r.spacing.w == static_cast<float>(g.spacing.w));

    LabelVolume l = LabelVolume::filled(g.extents, g.spacing);
    std::uniform_int_distribution<int> lab(0, 2);
    for (auto& v : l.labels) v = static_cast<std::uint8_t>(lab(rng));
    write_labels(l, dir.path / "l.nii");
    const LabelVolume rl = read_labels(dir.path / "l.nii");
    CHECK(rl.labels == l.labels);
    CHECK(rl.extents == l.extents);
  }
}

TEST_CASE("anisotropic spacing and orientation survive a roundtrip") {
  TempDir dir;
  VolumeGrid g = VolumeGrid::filled({2, 3, 4}, {1.0, 0.117, 0.117}, 1.5);
  g.orientation.qform_code = 1;
  g.orientation.quatern = {0.1f, 0.2f, 0.3f};
  g.orientation.srow[0] = {0.117f, 0.0f, 0.0f, -3.0f};
  write_volume(g, dir.path / "v.nii");
  const VolumeGrid r = read_volume(dir.path / "v.nii");
  CHECK(r.spacing.d == 1.0);
  CHECK(r.spacing.h == static_cast<float>(0.117));
  CHECK(r.spacing.w == static_cast<float>(0.117));
  CHECK(r.orientation == g.orientation);
}

TEST_CASE("malformed files are rejected") {
  TempDir dir;
  const VolumeGrid g = VolumeGrid::filled({2, 2, 2}, {}, 1.0);
  write_volume(g, dir.path / "v.nii");
  const auto good = slurp(dir.path / "v.nii");

  SUBCASE("truncated payload") {
    spit(dir.path / "t.nii", std::vector<char>(good.begin(), good.end() - 4));
    CHECK_THROWS_AS(read_volume(dir.path / "t.nii"), DataError);
  }
  SUBCASE("bad magic") {
    auto b = good;
    b[344] = 'x';
    spit(dir.path / "m.nii", b);
    CHECK_THROWS_AS(read_volume(dir.path / "m.nii"), DataError);
  }
  SUBCASE("unsupported datatype") {
    auto b = good;
    const std::int16_t dt = 4;  // int16
    std::memcpy(b.data() + 70, &dt, 2);
    spit(dir.path / "d.nii", b);
    CHECK_THROWS_AS(read_volume(dir.path / "d.nii"), DataError);
  }
  SUBCASE("big-endian header") {
    auto b = good;
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
    spit(dir.path / "e.nii", b);
    CHECK_THROWS_AS(read_volume(dir.path / "e.nii"), DataError);
  }
  SUBCASE("NaN voxel") {
    auto b = good;
    const float nan = std::nanf("");
    std::memcpy(b.data() + 352, &nan, 4);
    spit(dir.path / "n.nii", b);
    CHECK_THROWS_AS(read_volume(dir.path / "n.nii"), DataError);
  }
  SUBCASE("labels outside the class range") {
    LabelVolume l = LabelVolume::filled({2, 2, 2}, {});
    write_labels(l, dir.path / "l.nii");
    auto b = slurp(dir.path / "l.nii");
    b[352] = 7;
    spit(dir.path / "l.nii", b);
    CHECK_THROWS_AS(read_labels(dir.path / "l.nii"), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_volume(dir.path / "none.nii"), DataError); }
}

TEST_CASE("standardization") {
  VolumeGrid g = VolumeGrid::filled({1, 1, 2}, {});
  g.values = {0.0, 2.0};
  CHECK(standardize(g).values == std::vector<double>{-1.0, 1.0});
  CHECK_THROWS_AS(standardize(VolumeGrid::filled({2, 2, 2}, {}, 3.0)), DataError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(5.0, 3.0);
  VolumeGrid r = VolumeGrid::filled({4, 5, 6}, {});
  for (auto& v : r.values) v = n(rng);
  const VolumeGrid s = standardize(r);
  double m = 0, var = 0;
  for (double v : s.values) m += v;
  m /= s.values.size();
  for (double v : s.values) var += (v - m) * (v - m);
  var /= s.values.size();
  CHECK(std::abs(m) < 1e-10);
  CHECK(std::abs(var - 1.0) < 1e-10);

  VolumeGrid affine = r;
  for (auto& v : affine.values) v = 2.5 * v - 7.0;
  const VolumeGrid sa = standardize(affine), ss = standardize(s);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    CHECK(sa.values[i] == doctest::Approx(s.values[i]).epsilon(1e-10));
    CHECK(std::abs(ss.values[i] - s.values[i]) < 1e-10);
  }
}

TEST_CASE("derive_regions") {
  const Extents e{2, 2, 2};
  BinaryMask brain = BinaryMask::empty(e, {}), contra = BinaryMask::empty(e, {});
  brain.bits = {1, 1, 1, 1, 0, 0, 0, 0};
  contra.bits = {1, 1, 0, 0, 0, 0, 0, 0};
  const LabelVolume l = derive_regions(brain, contra);
  CHECK(l.labels == std::vector<std::uint8_t>{2, 2, 1, 1, 0, 0, 0, 0});
  CHECK(l.count(0) + l.count(1) + l.count(2) == 8);
  CHECK(derive_regions(brain, brain).count(1) == 0);
  CHECK(derive_regions(brain, BinaryMask::empty(e, {})).count(1) == 4);
  contra.bits[6] = 1;
  contra.bits[7] = 1;
  try {
    derive_regions(brain, contra);
    FAIL("expected an error");
  } catch (const DataError& err) {
    CHECK(std::string(err.what()).find('2') != std::string::npos);
  }
}

TEST_CASE("phantom generation") {
  PhantomParams p;
  p.seed = 17;
  const Phantom a = generate_phantom(p), b = generate_phantom(p);
  CHECK(a.volume.values == b.volume.values);
  CHECK(a.labels.labels == b.labels.labels);
  CHECK(a.volume.extents == Extents{32, 64, 64});
  CHECK_NOTHROW(derive_regions(brain_mask(a.labels), class_mask(a.labels, kContralateral)));
  p.seed = 18;
  CHECK(generate_phantom(p).volume.values != a.volume.values);

  // Contralateral is the low-w side.
  double contra_w = 0, ipsi_w = 0;
  const auto& e = a.labels.extents;
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        if (a.labels.at(z, y, x) == kContralateral) contra_w += x;
        if (a.labels.at(z, y, x) == kIpsilateral) ipsi_w += x;
      }
  CHECK(contra_w / a.labels.count(kContralateral) < ipsi_w / a.labels.count(kIpsilateral));

  PhantomParams tiny;
  tiny.extents = {4, 4, 4};
  CHECK_THROWS_AS(generate_phantom(tiny), std::invalid_argument);
}

TEST_CASE("phantom lesions sit inside the ipsilateral side at the configured shift") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomParams p;
    p.seed = seed;
    const Phantom ph = generate_phantom(p);
    REQUIRE(ph.lesion.count() > 0);
    CHECK(mask_subset(ph.lesion, class_mask(ph.labels, kIpsilateral)));
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t i = 0; i < ph.labels.labels.size(); ++i) {
      if (ph.labels.labels[i] != kIpsilateral) continue;
      if (ph.lesion.bits[i]) {
        in += ph.volume.values[i];
        ++nin;
      } else {
        out += ph.volume.values[i];
        ++nout;
      }
    }
    const double diff = in / nin - out / nout;
    const double tol = 4.0 * p.noise_sigma / std::sqrt(double(nin)) + 1e-9;
    CHECK(std::abs(diff - p.lesion_shift) <= tol);
  }
}

TEST_CASE("dataset split") {
  std::vector<DatasetItem> items;
  for (int g = 0; g < 3; ++g)
    for (int i = 0; i < 10; ++i) {
      items.push_back({"g" + std::to_string(g) + "_" + std::to_string(i), "group" + std::to_string(g),
                       "v" + std::to_string(i) + ".nii", "l" + std::to_string(i) + ".nii"});
    }
  const DatasetSplit s = split_dataset(items, 3, 1, 42);
  CHECK(s.train.size() == 9);
  CHECK(s.val.size() == 3);
  CHECK(s.test.size() == 18);
  std::size_t g0_test = 0;
  for (const auto& it : s.test) g0_test += it.group == "group0";
  CHECK(g0_test == 6);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& it : *part) CHECK(ids.insert(it.id).second);
  CHECK(ids.size() == items.size());

  const DatasetSplit again = split_dataset(items, 3, 1, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  items.push_back({"x", "small", "a", "b"});
  try {
    split_dataset(items, 3, 1, 42);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("small") != std::string::npos);
  }
}

TEST_CASE("manifest and csv roundtrip") {
  TempDir dir;
  const std::vector<DatasetItem> items{{"a", "g", "va.nii", "la.nii"}, {"b", "g", "vb.nii", "lb.nii"}};
  write_manifest(items, dir.path / "m.csv");
  CHECK(read_manifest(dir.path / "m.csv") == items);
  const DatasetItem r = resolve(items[0], dir.path);
  CHECK(r.volume_path == dir.path / "va.nii");

  CHECK(csv::format(0.1) == "0.1");
  CHECK(std::stod(csv::format(1.0 / 3.0)) == 1.0 / 3.0);
  csv::Table t;
  t.header = {"x", "y"};
  t.rows = {{"1", "2"}};
  csv::write(t, dir.path / "t.csv");
  const auto back = csv::read(dir.path / "t.csv");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.column("y") == 1);
  CHECK_THROWS(back.column("z"));
}
