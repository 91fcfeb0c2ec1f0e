#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "mdl/analysis.hpp"
#include "mdl/csv.hpp"

namespace mdl {

namespace {

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

std::mt19937_64 resample_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

double safe_statistic(const PairStatistic& f, std::span<const double> a, std::span<const double> b) {
  try {
    return f(a, b);
  } catch (const std::invalid_argument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

void check_inputs(std::span<const double> a, std::span<const double> b, const BootstrapOptions& o) {
  if (a.size() != b.size()) throw std::invalid_argument("bootstrap needs paired samples of equal size");
  if (a.size() < 2) throw std::invalid_argument("bootstrap needs at least 2 pairs");
  if (o.resamples < 1000) throw std::invalid_argument("bootstrap needs at least 1000 resamples");
  if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

}  // namespace

double hemispheric_ratio(const LabelVolume& labels) {
  const std::size_t ipsi = labels.count(kIpsilateral);
  if (ipsi == 0) throw DataError("hemispheric ratio undefined: ipsilateral hemisphere is empty");
  const double vv = labels.spacing.voxel_volume();
  return (static_cast<double>(labels.count(kContralateral)) * vv) / (static_cast<double>(ipsi) * vv);
}

double cohens_d(std::span<const double> a, std::span<const double> b, CohensVariant variant) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("cohens_d needs at least 2 values per sample");
  if (variant == CohensVariant::paired) {
    if (a.size() != b.size()) throw std::invalid_argument("paired cohens_d needs equal sample sizes");
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    const double m = mean_of(diff);
    const double var = sample_variance(diff, m);
    if (!(var > 0.0)) throw std::invalid_argument("cohens_d: paired differences have zero variance");
    return m / std::sqrt(var);
  }
  const double ma = mean_of(a), mb = mean_of(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled = ((na - 1.0) * sample_variance(a, ma) + (nb - 1.0) * sample_variance(b, mb)) / (na + nb - 2.0);
  if (!(pooled > 0.0)) throw std::invalid_argument("cohens_d: pooled variance is zero");
  return (ma - mb) / std::sqrt(pooled);
}

PairStatistic cohens_d_statistic(CohensVariant variant) {
  return [variant](std::span<const double> a, std::span<const double> b) { return cohens_d(a, b, variant); };
}

std::vector<double> bootstrap_distribution(std::span<const double> a, std::span<const double> b,
                                           const PairStatistic& statistic, std::size_t resamples,
                                           std::uint64_t seed) {
  const std::size_t n = a.size();
  std::vector<double> ra(n), rb(n), out;
  out.reserve(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    auto rng = resample_stream(seed, r);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = pick(rng);
      ra[i] = a[k];
      rb[i] = b[k];
    }
    const double s = safe_statistic(statistic, ra, rb);
    if (std::isfinite(s)) out.push_back(s);
  }
  return out;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

namespace {

// Shared front half of both interval routes: estimate plus the sorted
// distribution, or a collapsed result when the distribution is degenerate.
// Returns true when the interval has already collapsed.
bool prepare(std::span<const double> a, std::span<const double> b, const PairStatistic& statistic,
             const BootstrapOptions& o, BootstrapResult& r, std::vector<double>& dist) {
  check_inputs(a, b, o);
  r.estimate = statistic(a, b);
  if (!std::isfinite(r.estimate)) throw std::invalid_argument("bootstrap statistic is not finite on the data");
  dist = bootstrap_distribution(a, b, statistic, o.resamples, o.seed);
  std::sort(dist.begin(), dist.end());
  r.resamples_used = dist.size();
  if (dist.empty() || dist.front() == dist.back()) {
    r.low = r.high = r.estimate;
    r.degenerate = true;
    return true;
  }
  return false;
}

}  // namespace

BootstrapResult percentile_ci(std::span<const double> a, std::span<const double> b, const PairStatistic& statistic,
                              const BootstrapOptions& o) {
  std::vector<double> dist;
  BootstrapResult r;
  if (prepare(a, b, statistic, o, r, dist)) return r;
  r.low = quantile_sorted(dist, o.alpha / 2.0);
  r.high = quantile_sorted(dist, 1.0 - o.alpha / 2.0);
  return r;
}

BootstrapResult bca_ci(std::span<const double> a, std::span<const double> b, const PairStatistic& statistic,
                       const BootstrapOptions& o) {
  std::vector<double> dist;
  BootstrapResult r;
  if (prepare(a, b, statistic, o, r, dist)) return r;
  const boost::math::normal_distribution<double> normal;
  const double count = static_cast<double>(dist.size());

  if (!o.force_zero_correction) {
    const auto below = std::lower_bound(dist.begin(), dist.end(), r.estimate) - dist.begin();
    const double frac = std::clamp(static_cast<double>(below) / count, 0.5 / count, 1.0 - 0.5 / count);
    r.z0 = boost::math::quantile(normal, frac);

    const std::size_t n = a.size();
    std::vector<double> ja(n - 1), jb(n - 1), jack;
    for (std::size_t skip = 0; skip < n; ++skip) {
      for (std::size_t i = 0, k = 0; i < n; ++i) {
        if (i == skip) continue;
        ja[k] = a[i];
        jb[k] = b[i];
        ++k;
      }
      const double s = safe_statistic(statistic, ja, jb);
      if (std::isfinite(s)) jack.push_back(s);
    }
    if (!jack.empty()) {
      const double jm = mean_of(jack);
      double num = 0.0, den = 0.0;
      for (double s : jack) {
        const double d = jm - s;
        num += d * d * d;
        den += d * d;
      }
      r.acceleration = den > 0.0 ? num / (6.0 * std::pow(den, 1.5)) : 0.0;
    }
  }

  auto adjusted = [&](double q) {
    const double z = boost::math::quantile(normal, q);
    const double t = r.z0 + z;
    const double denom = 1.0 - r.acceleration * t;
    if (!(denom > 0.0)) return q < 0.5 ? 0.0 : 1.0;
    return boost::math::cdf(normal, r.z0 + t / denom);
  };
  r.low = quantile_sorted(dist, adjusted(o.alpha / 2.0));
  r.high = quantile_sorted(dist, adjusted(1.0 - o.alpha / 2.0));
  if (r.low > r.high) std::swap(r.low, r.high);
  return r;
}

BiomarkerResult biomarker(const std::vector<LabelVolume>& gts, const std::vector<LabelVolume>& preds,
                          const BootstrapOptions& options, CohensVariant variant) {
  if (gts.size() != preds.size()) throw std::invalid_argument("biomarker needs one prediction per ground truth");
  BiomarkerResult r;
  r.alpha = options.alpha;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    r.gt_ratios.push_back(hemispheric_ratio(gts[i]));
    r.pred_ratios.push_back(hemispheric_ratio(preds[i]));
  }
  const auto stat = cohens_d_statistic(variant);
  r.cohens_d = stat(r.gt_ratios, r.pred_ratios);
  r.ci = bca_ci(r.gt_ratios, r.pred_ratios, stat, options);
  return r;
}

void write_biomarker_csv(const BiomarkerResult& r, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"d", "ci_low", "ci_high", "n_volumes", "resamples", "alpha", "z0", "acceleration", "degenerate"};
  t.rows.push_back({csv::format(r.cohens_d), csv::format(r.ci.low), csv::format(r.ci.high),
                    std::to_string(r.gt_ratios.size()), std::to_string(r.ci.resamples_used), csv::format(r.alpha),
                    csv::format(r.ci.z0), csv::format(r.ci.acceleration), r.ci.degenerate ? "1" : "0"});
  csv::write(t, path);
}

void write_ratio_csv(const std::vector<std::string>& ids, const BiomarkerResult& r, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"id", "gt_ratio", "pred_ratio"};
  for (std::size_t i = 0; i < ids.size() && i < r.gt_ratios.size(); ++i) {
    t.rows.push_back({ids[i], csv::format(r.gt_ratios[i]), csv::format(r.pred_ratios[i])});
  }
  const auto g = mean_sd(r.gt_ratios), p = mean_sd(r.pred_ratios);
  t.rows.push_back({"mean", csv::format(g.first), csv::format(p.first)});
  t.rows.push_back({"sd", csv::format(g.second), csv::format(p.second)});
  csv::write(t, path);
}

void write_midline_csv(const std::vector<MidlineRow>& rows, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"n", "dice_ipsi", "dice_contra", "sd_ipsi", "sd_contra"};
  for (const auto& r : rows) {
    t.rows.push_back({std::to_string(r.n), csv::format(r.dice_ipsi), csv::format(r.dice_contra),
                      csv::format(r.sd_ipsi), csv::format(r.sd_contra)});
  }
  csv::write(t, path);
}

}  // namespace mdl
