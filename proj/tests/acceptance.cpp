// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. An optional argument runs a single criterion by name.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>

#include "gradient_cases.hpp"
#include "mdl/analysis.hpp"
#include "mdl/metrics.hpp"
#include "mdl/network.hpp"
#include "mdl/phantom.hpp"
#include "mdl/train.hpp"
#include "oracles.hpp"

using namespace mdl;
using namespace mdl::testing;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr std::size_t kGradCasesPerPrimitive = 30;
constexpr double kGradBudgetSeconds = 300.0;
constexpr double kCeUniformTol = 1e-9;
constexpr double kDiceTol = 1e-5;
constexpr std::size_t kMetricPairs = 100;
constexpr std::size_t kOverfitEpochs = 200;
constexpr double kOverfitFilterRate = 0.125;
constexpr double kOverfitLearningRate = 1e-3;
constexpr double kOverfitTrainBrain = 0.90;
constexpr double kOverfitTrainContra = 0.85;
constexpr double kOverfitHeldOutBrain = 0.80;
constexpr double kOverfitBudgetSeconds = 900.0;
constexpr double kRatioLow = 0.22, kRatioHigh = 0.30;
constexpr std::size_t kEnsemblePhantoms = 20;
constexpr std::size_t kMidlinePhantoms = 20;
constexpr double kMidlineTol = 1e-12;
constexpr double kCohensTol = 1e-12;
constexpr double kBcaPercentileTol = 1e-12;
constexpr std::size_t kNullReps = 200;
constexpr std::size_t kNullResamples = 2000;
constexpr double kNullCoverage = 0.90;
constexpr std::size_t kGridCells = 1089;
constexpr double kGridDice = 0.99;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PhantomParams small_phantom(std::uint64_t seed) {
  PhantomParams p;
  p.extents = {32, 32, 32};
  p.lesion_radius_min = 1.5;
  p.lesion_radius_max = 3.0;
  p.seed = seed;
  return p;
}

LabelVolume perturb(const LabelVolume& l, std::mt19937_64& rng, double rate) {
  LabelVolume out = l;
  std::bernoulli_distribution flip(rate);
  for (auto& v : out.labels)
    if (v != kBackground && flip(rng)) v = v == kIpsilateral ? kContralateral : kIpsilateral;
  return out;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240611);
  double worst = 0.0;
  std::string worst_case;
  std::size_t cases = 0, primitives = 0;
  bool ok = true;
  for (const auto& c : gradient_cases()) {
    ++primitives;
    for (std::size_t i = 0; i < kGradCasesPerPrimitive; ++i) {
      const GradReport r = c.run(rng);
      ++cases;
      if (r.checked == 0 || !(r.worst <= kFdTolerance)) ok = false;
      if (r.worst > worst) {
        worst = r.worst;
        worst_case = c.name;
      }
    }
  }

  // Whole network through the deep supervision loss, sampled entries.
  NetworkConfig cfg;
  cfg.base_filters = 4;
  cfg.seed = 3;
  Model model = build_model(cfg);
  const Tensor x = random_tensor(rng, {1, 1, 16, 16, 16}, -1.0, 1.0, false);
  LabelVolume labels = LabelVolume::filled({16, 16, 16}, {});
  for (auto& v : labels.labels) v = static_cast<std::uint8_t>(pick(rng, 0, 2));
  auto loss = [&] { return deep_supervision_loss(model.forward(x, Mode::eval), labels).total; };
  auto params = model.trainable_parameters();
  for (auto& p : params) p.zero_grad();
  backward(loss());
  double net_worst = 0.0;
  {
    NoGradGuard guard;
    for (std::size_t i = 0; i < kGradCasesPerPrimitive; ++i) {
      Tensor& p = params[pick(rng, 0, params.size() - 1)];
      const std::size_t k = pick(rng, 0, p.numel() - 1);
      const double analytic = p.has_grad() ? p.grad()[k] : 0.0;
      const double orig = p.data()[k];
      p.mutable_data()[k] = orig + kFdStep;
      const double up = loss().item();
      p.mutable_data()[k] = orig - kFdStep;
      const double down = loss().item();
      p.mutable_data()[k] = orig;
      const double numeric = (up - down) / (2 * kFdStep);
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
      net_worst = std::max(net_worst, rel);
    }
  }
  ok = ok && net_worst <= kFdTolerance;
  const double secs = seconds_since(t0);
  ok = ok && secs < kGradBudgetSeconds;
  return {ok, fmt("%zu primitives x %zu cases, worst rel err %.2e (%s), network %.2e, %.0f s", primitives,
                  kGradCasesPerPrimitive, worst, worst_case.c_str(), net_worst, secs)};
}

Outcome loss_identities() {
  LabelVolume balanced = LabelVolume::filled({3, 3, 3}, {});
  for (std::size_t i = 0; i < balanced.labels.size(); ++i) balanced.labels[i] = static_cast<std::uint8_t>(i % 3);
  const auto t = OneHotTarget::from_labels(balanced);
  const Tensor perfect = Tensor::from_data(t.shape, t.values);
  const Tensor uniform = Tensor::full(t.shape, 1.0 / 3.0);
  const double ce_perfect = cross_entropy(perfect, t).item();
  const double ce_uniform = cross_entropy(uniform, t).item();
  const double dice_perfect = dice_loss(perfect, t).item();
  const double dice_uniform = dice_loss(uniform, t).item();
  const bool ok = ce_perfect == 0.0 && std::abs(ce_uniform - std::log(3.0) / 3.0) <= kCeUniformTol &&
                  std::abs(dice_perfect) <= kDiceTol && std::abs(dice_uniform - 0.5) <= kDiceTol;
  return {ok, fmt("CE perfect %.3g, CE uniform - log(3)/3 = %.2e, Dice perfect %.2e, Dice uniform %.8f", ce_perfect,
                  ce_uniform - std::log(3.0) / 3.0, dice_perfect, dice_uniform)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> density(0.05, 0.6);
  const Spacing aniso{1.0, 0.117, 0.117};
  std::size_t mismatches = 0;
  for (std::size_t trial = 0; trial < kMetricPairs; ++trial) {
    const Spacing s = trial % 2 ? aniso : Spacing{};
    BinaryMask a = oracle::random_mask(rng, {8, 8, 8}, s, density(rng));
    BinaryMask b = oracle::random_mask(rng, {8, 8, 8}, s, density(rng));
    a.bits[0] = 1;
    b.bits[511] = 1;
    const auto c = oracle::counts(a, b);
    const auto pr = precision_recall(a, b);
    const bool same = hausdorff_mm(a, b, s) == oracle::hausdorff(a, b, s) && dice(a, b) == oracle::dice(a, b) &&
                      pr.precision == double(c.tp) / double(c.tp + c.fp) &&
                      pr.recall == double(c.tp) / double(c.tp + c.fn);
    mismatches += !same;
  }
  return {mismatches == 0, fmt("%zu random 8^3 pairs, %zu mismatches", kMetricPairs, mismatches)};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Phantom> ph;
  for (std::uint64_t s = 1; s <= 4; ++s) {
    PhantomParams p;  // default 32x64x64
    p.seed = s;
    ph.push_back(generate_phantom(p));
  }
  std::vector<Sample> train_set;
  for (std::size_t i = 0; i < 3; ++i) train_set.push_back(make_sample(std::to_string(i), ph[i].volume, ph[i].labels));
  NetworkConfig nc;
  nc.filter_rate = kOverfitFilterRate;
  nc.seed = 7;
  TrainConfig tc;
  tc.epochs = kOverfitEpochs;
  tc.learning_rate = kOverfitLearningRate;
  tc.ensemble_size = 1;
  tc.selection = Selection::last_epoch;
  const auto members = train_ensemble(nc, train_set, {}, tc);
  const Model& model = members.front().model;

  double min_brain = 1.0, min_contra = 1.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto rows = evaluate_volume(segment(model, ph[i].volume), ph[i].labels);
    min_brain = std::min(min_brain, rows[0].dice);
    min_contra = std::min(min_contra, rows[1].dice);
  }
  const double held = evaluate_volume(segment(model, ph[3].volume), ph[3].labels)[0].dice;
  const double secs = seconds_since(t0);
  const bool ok = min_brain >= kOverfitTrainBrain && min_contra >= kOverfitTrainContra &&
                  held >= kOverfitHeldOutBrain && secs <= kOverfitBudgetSeconds;
  return {ok, fmt("%zu epochs: train brain min %.4f, contra min %.4f, held-out brain %.4f, %.0f s", kOverfitEpochs,
                  min_brain, min_contra, held, secs)};
}

Outcome capacity() {
  const std::array<double, 4> rates{0.25, 0.5, 0.75, 1.0};
  std::array<std::size_t, 4> counts{};
  for (std::size_t i = 0; i < 4; ++i) {
    NetworkConfig c;
    c.filter_rate = rates[i];
    counts[i] = count_parameters(c);
  }
  bool increasing = true;
  for (std::size_t i = 1; i < 4; ++i) increasing = increasing && counts[i] > counts[i - 1];
  const double ratio = double(counts[1]) / double(counts[3]);
  return {increasing && ratio >= kRatioLow && ratio <= kRatioHigh,
          fmt("counts %zu %zu %zu %zu, 0.5/1.0 ratio %.4f", counts[0], counts[1], counts[2], counts[3], ratio)};
}

Outcome ensemble_invariants() {
  NetworkConfig nc;
  nc.filter_rate = kOverfitFilterRate;
  const fs::path dir = fs::temp_directory_path() / "mdl_acceptance_ensemble";
  fs::create_directories(dir);
  nc.seed = 1;
  save_checkpoint(build_model(nc), dir / "a.ckpt");
  const Model single = load_checkpoint(dir / "a.ckpt");
  const Model c1 = load_checkpoint(dir / "a.ckpt"), c2 = load_checkpoint(dir / "a.ckpt"),
              c3 = load_checkpoint(dir / "a.ckpt");
  fs::remove_all(dir);
  nc.seed = 2;
  const Model m2 = build_model(nc);
  nc.seed = 3;
  const Model m3 = build_model(nc);

  std::size_t identical_fail = 0, order_fail = 0;
  for (std::size_t k = 0; k < kEnsemblePhantoms; ++k) {
    const Phantom ph = generate_phantom(small_phantom(100 + k));
    identical_fail += ensemble_predict({&c1, &c2, &c3}, ph.volume).labels != segment(single, ph.volume).labels;
    std::vector<const Model*> order{&single, &m2, &m3};
    std::sort(order.begin(), order.end());
    const auto ref = ensemble_predict(order, ph.volume).labels;
    while (std::next_permutation(order.begin(), order.end()))
      order_fail += ensemble_predict(order, ph.volume).labels != ref;
  }
  return {identical_fail == 0 && order_fail == 0,
          fmt("%zu phantoms: identical-checkpoint mismatches %zu, order mismatches %zu over 6 permutations",
              kEnsemblePhantoms, identical_fail, order_fail)};
}

Outcome midline() {
  std::mt19937_64 rng(77);
  std::size_t monotone_fail = 0, perfect_fail = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < kMidlinePhantoms; ++s) {
    PhantomParams p;
    p.seed = 200 + s;
    const Phantom gt = generate_phantom(p);
    const LabelVolume pred = perturb(gt.labels, rng, 0.05);
    const BinaryMask mid = extract_midline(gt.labels);
    BinaryMask prev = mid;
    for (std::size_t n = 1; n <= 10; ++n) {
      const BinaryMask band = oracle::dilate_cross(mid, n);
      for (std::size_t i = 0; i < band.bits.size(); ++i) monotone_fail += prev.bits[i] && !band.bits[i];
      prev = band;
      const MidlineDice md = midline_dice(pred, gt.labels, n);
      const double ipsi = oracle::dice(oracle::band_restrict(class_mask(pred, kIpsilateral), band),
                                       oracle::band_restrict(class_mask(gt.labels, kIpsilateral), band));
      const double contra = oracle::dice(oracle::band_restrict(class_mask(pred, kContralateral), band),
                                         oracle::band_restrict(class_mask(gt.labels, kContralateral), band));
      worst = std::max({worst, std::abs(md.ipsilateral - ipsi), std::abs(md.contralateral - contra)});
      const MidlineDice perfect = midline_dice(gt.labels, gt.labels, n);
      perfect_fail += perfect.ipsilateral != 1.0 || perfect.contralateral != 1.0;
    }
  }
  return {monotone_fail == 0 && perfect_fail == 0 && worst <= kMidlineTol,
          fmt("%zu phantoms x n=1..10: band violations %zu, max |dice - oracle| %.2e, perfect failures %zu",
              kMidlinePhantoms, monotone_fail, worst, perfect_fail)};
}

Outcome biomarker_statistics() {
  // Hand-evaluated effect sizes.
  struct Fixture {
    std::vector<double> a, b;
    CohensVariant variant;
    double expected;
  };
  const std::vector<Fixture> fixtures{
      // means 2 and 3, both sample variances 1
      {{1, 2, 3}, {2, 3, 4}, CohensVariant::pooled, -1.0},
      // means 1 and 0, both sample variances 2
      {{0, 2}, {-1, 1}, CohensVariant::pooled, 1.0 / std::sqrt(2.0)},
      // means 5 and 4.5, squared deviations 32 and 42 over 14 degrees of freedom
      {{2, 4, 4, 4, 5, 5, 7, 9}, {1, 2, 3, 4, 5, 6, 7, 8}, CohensVariant::pooled, 0.5 / std::sqrt(74.0 / 14.0)},
      // differences -1, -2, -3: mean -2, sd 1
      {{1, 2, 3}, {2, 4, 6}, CohensVariant::paired, -2.0},
  };
  double fixture_err = 0.0;
  for (const auto& f : fixtures) fixture_err = std::max(fixture_err, std::abs(cohens_d(f.a, f.b, f.variant) - f.expected));

  std::mt19937_64 rng(8);
  auto sample = [&](std::size_t n) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
  };
  const auto stat = cohens_d_statistic();
  BootstrapOptions o;
  o.resamples = kNullResamples;
  o.seed = 3;
  const auto a = sample(12), b = sample(12);
  o.force_zero_correction = true;
  const auto zero = bca_ci(a, b, stat, o);
  const auto pct = percentile_ci(a, b, stat, o);
  const double bca_err = std::max(std::abs(zero.low - pct.low), std::abs(zero.high - pct.high));
  o.force_zero_correction = false;

  std::size_t covered = 0;
  for (std::size_t r = 0; r < kNullReps; ++r) {
    const auto x = sample(20), y = sample(20);
    o.seed = r;
    const auto ci = bca_ci(x, y, stat, o);
    covered += ci.low <= 0.0 && 0.0 <= ci.high;
  }
  const double coverage = double(covered) / double(kNullReps);
  return {fixture_err <= kCohensTol && bca_err <= kBcaPercentileTol && coverage >= kNullCoverage,
          fmt("fixture max err %.2e, |BCa(z0=a=0) - percentile| %.2e, null coverage %.3f over %zu reps", fixture_err,
              bca_err, coverage, kNullReps)};
}

Outcome grid_search() {
  std::vector<VolumeGrid> vols;
  std::vector<LabelVolume> gts;
  for (std::uint64_t s = 0; s < 4; ++s) {
    PhantomParams p = small_phantom(300 + s);
    p.lesion_probability = 0.0;
    p.noise_sigma = 0.0;
    p.hemisphere_sigma = 0.0;
    p.contralateral_mean = p.ipsilateral_mean;  // background and brain only
    const Phantom ph = generate_phantom(p);
    vols.push_back(ph.volume);
    gts.push_back(ph.labels);
  }
  const auto r = gridsearch(vols, gts);
  double best = -1.0;
  for (const auto& c : r.table) best = std::max(best, c.mean_dice);
  double selected = 0.0;
  for (std::size_t v = 0; v < vols.size(); ++v)
    selected += dice(baseline_threshold_segment(vols[v], r.best_percentile_index, r.best_alpha), brain_mask(gts[v]));
  selected /= double(vols.size());
  return {r.table.size() == kGridCells && r.best_mean_dice == best && selected >= kGridDice,
          fmt("%zu cells, selected i=%zu alpha=%zu, table max %.6f, selected mean brain Dice %.6f", r.table.size(),
              r.best_percentile_index, r.best_alpha, best, selected)};
}

bool same_file(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  return std::equal(std::istreambuf_iterator<char>(fa), {}, std::istreambuf_iterator<char>(fb), {});
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / "mdl_acceptance_e2e";
  fs::remove_all(root);
  const fs::path runs[2] = {root / "first", root / "second"};
  for (const auto& dir : runs) {
    const std::string cmd = std::string("bash \"") + MDL_PIPELINE_SCRIPT + "\" \"" + MDL_CLI_PATH + "\" \"" +
                            dir.string() + "\" > \"" + (root.string() + "_" + dir.filename().string() + ".log") +
                            "\" 2>&1";
    fs::create_directories(root);
    if (std::system(cmd.c_str()) != 0) return {false, "pipeline script failed: " + cmd};
  }
  const std::vector<std::string> reports{"data/manifest.csv",     "model/member0.ckpt",       "model/history_member0.csv",
                                         "pred/predictions.csv",  "eval/metrics.csv",         "midline/midline.csv",
                                         "biomarker/biomarker.csv", "biomarker/ratios.csv", "gridsearch/gridsearch.csv"};
  std::size_t missing = 0;
  for (const auto& r : reports) missing += !fs::exists(runs[0] / r);
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(runs[0])) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path twin = runs[1] / fs::relative(e.path(), runs[0]);
    differing += !fs::exists(twin) || !same_file(e.path(), twin);
  }
  std::size_t files2 = 0;
  for (const auto& e : fs::recursive_directory_iterator(runs[1])) files2 += e.is_regular_file();
  const double secs = seconds_since(t0);
  const bool ok = missing == 0 && differing == 0 && files == files2 && files > 0;
  if (ok) fs::remove_all(root);
  return {ok, fmt("two runs, %zu files each, %zu differing, %zu missing reports, %.0f s", files, differing, missing,
                  secs)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_suite", gradient_suite},   {"loss_identities", loss_identities},
      {"metric_oracle", metric_oracle},     {"overfit", overfit},
      {"capacity_scaling", capacity},       {"ensemble_invariants", ensemble_invariants},
      {"midline_analysis", midline},        {"biomarker_statistics", biomarker_statistics},
      {"grid_search", grid_search},         {"end_to_end_cli", end_to_end},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  bool all = true, ran = false;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && only != name) continue;
    ran = true;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  if (!ran) {
    std::cerr << "unknown criterion " << only << std::endl;
    return 2;
  }
  return all ? 0 : 1;
}
