#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "dtelab/core_model.hpp"
#include "dtelab/parallel.hpp"

namespace dtelab {

enum class CiMethod { normal, percentile };
enum class NuisanceMode { refit, frozen };

inline CiMethod parse_ci_method(const std::string& s) {
  if (s == "normal") return CiMethod::normal;
  if (s == "percentile") return CiMethod::percentile;
  throw Error("unknown CI method '" + s + "' (expected normal or percentile)");
}
inline const char* to_string(CiMethod m) { return m == CiMethod::normal ? "normal" : "percentile"; }

inline NuisanceMode parse_nuisance_mode(const std::string& s) {
  if (s == "refit") return NuisanceMode::refit;
  if (s == "frozen") return NuisanceMode::frozen;
  throw Error("unknown nuisance mode '" + s + "' (expected refit or frozen)");
}
inline const char* to_string(NuisanceMode m) { return m == NuisanceMode::refit ? "refit" : "frozen"; }

struct BootstrapConfig {
  std::size_t replications = 500;
  double level = 0.95;
  CiMethod method = CiMethod::normal;
  NuisanceMode nuisance_mode = NuisanceMode::refit;
  bool stratified = false;  // resample within arms
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    if (replications < 2) throw Error("bootstrap needs at least 2 replications");
    if (!(level > 0.0 && level < 1.0)) throw Error("confidence level must lie in (0,1)");
  }
};

// z_{1 - alpha/2} for a two-sided interval at the given level.
inline double normal_multiplier(double level) {
  boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(std_normal, 1.0 - (1.0 - level) / 2.0);
}

// Linear interpolation between order statistics at position p * (m - 1).
inline double interpolated_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error("quantile of an empty sample");
  std::ranges::sort(values);
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct BootstrapResult {
  std::size_t statistics = 0;
  std::vector<double> point;                  // full-sample estimate
  std::vector<std::vector<double>> replicates;  // successful replicates, in index order
  std::vector<double> se;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::size_t failures = 0;
  std::size_t redraws = 0;
  double level = 0.95;
  CiMethod method = CiMethod::normal;
  NuisanceMode nuisance_mode = NuisanceMode::refit;

  // Column k of the replicate matrix.
  std::vector<double> column(std::size_t k) const {
    std::vector<double> out(replicates.size());
    for (std::size_t b = 0; b < replicates.size(); ++b) out[b] = replicates[b][k];
    return out;
  }

  BootstrapResult slice(std::size_t offset, std::size_t count) const {
    if (offset + count > statistics) throw Error("bootstrap slice out of range");
    BootstrapResult out = *this;
    out.statistics = count;
    auto cut = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(offset),
                                 v.begin() + static_cast<std::ptrdiff_t>(offset + count));
    };
    out.point = cut(point);
    out.se = cut(se);
    out.ci_lo = cut(ci_lo);
    out.ci_hi = cut(ci_hi);
    for (auto& r : out.replicates) r = cut(r);
    return out;
  }
};

// Standard errors and intervals from replicate draws.
inline void summarize_replicates(BootstrapResult& r) {
  const std::size_t m = r.statistics;
  r.se.assign(m, 0.0);
  r.ci_lo.assign(m, 0.0);
  r.ci_hi.assign(m, 0.0);
  const double z = normal_multiplier(r.level);
  const double alpha = 1.0 - r.level;
  for (std::size_t k = 0; k < m; ++k) {
    const auto col = r.column(k);
    r.se[k] = sample_sd(col);
    if (r.method == CiMethod::normal) {
      r.ci_lo[k] = r.point[k] - z * r.se[k];
      r.ci_hi[k] = r.point[k] + z * r.se[k];
    } else {
      r.ci_lo[k] = interpolated_quantile(col, alpha / 2.0);
      r.ci_hi[k] = interpolated_quantile(col, 1.0 - alpha / 2.0);
    }
  }
}

// Draws resample b (n rows, with replacement) from a seed derived from (seed, b,
// attempt). Returns false when the draw leaves an arm empty.
inline bool draw_resample(std::span<const std::uint8_t> treatment, bool stratified, std::uint64_t seed,
                          std::size_t replicate, std::size_t attempt, std::vector<std::size_t>& rows) {
  const std::size_t n = treatment.size();
  std::mt19937_64 rng(derive_seed(seed, {0xB007, replicate, attempt}));
  rows.resize(n);
  if (!stratified) {
    bool seen[2] = {false, false};
    for (auto& r : rows) {
      r = static_cast<std::size_t>(rng() % n);
      seen[treatment[r]] = true;
    }
    return seen[0] && seen[1];
  }
  std::vector<std::size_t> arm[2];
  for (std::size_t i = 0; i < n; ++i) arm[treatment[i]].push_back(i);
  if (arm[0].empty() || arm[1].empty()) return false;
  std::size_t k = 0;
  for (int d = 0; d < 2; ++d)
    for (std::size_t c = 0; c < arm[d].size(); ++c) rows[k++] = arm[d][rng() % arm[d].size()];
  return true;
}

// Unit-level nonparametric bootstrap over row resamples. `statistic(rows,
// seed)` maps a row multiset (indices into the original units) to a statistic
// vector; `point` is the full-sample value. Replicates whose draw empties an
// arm are redrawn up to 3 times, then counted as failures; the run aborts if
// failures reach B/10.
template <class Statistic>
BootstrapResult bootstrap_rows(std::span<const std::uint8_t> treatment, std::vector<double> point,
                               Statistic&& statistic, const BootstrapConfig& cfg) {
  cfg.validate();
  const std::size_t B = cfg.replications;
  std::vector<std::vector<double>> reps(B);
  std::vector<char> ok(B, 0);
  std::vector<std::size_t> redraws(B, 0);
  parallel_for(B, cfg.threads, [&](std::size_t b) {
    std::vector<std::size_t> rows;
    for (std::size_t attempt = 0; attempt <= 3; ++attempt) {
      if (draw_resample(treatment, cfg.stratified, cfg.seed, b, attempt, rows)) {
        reps[b] = statistic(std::span<const std::size_t>(rows), derive_seed(cfg.seed, {0x5EED, b}));
        if (reps[b].size() != point.size()) throw Error("bootstrap statistic changed length across replicates");
        ok[b] = 1;
        return;
      }
      redraws[b] = attempt + 1;
    }
  });

  BootstrapResult r;
  r.statistics = point.size();
  r.point = std::move(point);
  r.level = cfg.level;
  r.method = cfg.method;
  r.nuisance_mode = cfg.nuisance_mode;
  for (std::size_t b = 0; b < B; ++b) {
    r.redraws += std::min<std::size_t>(redraws[b], 3);
    if (ok[b]) r.replicates.push_back(std::move(reps[b]));
    else ++r.failures;
  }
  if (r.failures * 10 >= B)
    throw Error("bootstrap aborted: " + std::to_string(r.failures) + " of " + std::to_string(B) +
                " replicates failed (empty arm after redraws)");
  summarize_replicates(r);
  return r;
}

// Bootstrap of a whole pipeline: `pipeline(dataset, seed)` is rerun on every
// resampled dataset. The point estimate uses `seed` itself.
template <class Pipeline>
BootstrapResult bootstrap(const ExperimentDataset& ds, Pipeline&& pipeline, const BootstrapConfig& cfg) {
  std::vector<double> point = pipeline(ds, cfg.seed);
  return bootstrap_rows(
      ds.treatment(), std::move(point),
      [&](std::span<const std::size_t> rows, std::uint64_t seed) { return pipeline(ds.select(rows), seed); }, cfg);
}

// Fills se and interval bounds on a curve from the matching slice of a
// bootstrap result (PTE: zero atom first, then bins).
inline EffectCurve attach_inference(EffectCurve curve, const BootstrapResult& r) {
  const std::size_t expected = curve.point.size() + (curve.zero_atom ? 1 : 0);
  if (r.statistics != expected)
    throw Error("bootstrap result has " + std::to_string(r.statistics) + " statistics, curve needs " +
                std::to_string(expected));
  std::size_t k = 0;
  // Percentile bounds need not contain the point estimate; widen to it.
  auto bounds = [&](double point, std::size_t idx) {
    return std::pair{std::min(r.ci_lo[idx], point), std::max(r.ci_hi[idx], point)};
  };
  if (curve.zero_atom) {
    auto [lo, hi] = bounds(curve.zero_atom->point, 0);
    curve.zero_atom->se = r.se[0];
    curve.zero_atom->ci_lo = lo;
    curve.zero_atom->ci_hi = hi;
    k = 1;
  }
  curve.se.resize(curve.point.size());
  curve.ci_lo.resize(curve.point.size());
  curve.ci_hi.resize(curve.point.size());
  for (std::size_t j = 0; j < curve.point.size(); ++j, ++k) {
    auto [lo, hi] = bounds(curve.point[j], k);
    curve.se[j] = r.se[k];
    curve.ci_lo[j] = lo;
    curve.ci_hi[j] = hi;
  }
  return curve;
}

}  // namespace dtelab
