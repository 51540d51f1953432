#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dtelab/core_model.hpp"
#include "dtelab/estimators.hpp"
#include "dtelab/inference.hpp"
#include "dtelab/nuisance.hpp"

namespace dtelab {

struct EstimationConfig {
  EstimatorKind kind = EstimatorKind::adjusted;
  NuisanceConfig nuisance;
  std::int64_t pte_span = 0;  // 0 means one grid step
  bool rearrange = false;     // isotonic rearrangement of each arm's CDF before differencing

  std::int64_t span_for(const LocationGrid& grid) const { return pte_span == 0 ? grid.step() : pte_span; }
};

struct PointEstimates {
  CdfPair cdf;
  EffectCurve dte;
  EffectCurve pte;
  AteResult ate_unadjusted;
  std::optional<AteResult> ate_adjusted;

  // Bootstrap statistic layout: DTE per location, PTE (zero atom, then bins),
  // unadjusted ATE, adjusted ATE when present.
  std::vector<double> flatten() const {
    std::vector<double> out = dte.point;
    const auto p = pte.values();
    out.insert(out.end(), p.begin(), p.end());
    out.push_back(ate_unadjusted.point);
    if (ate_adjusted) out.push_back(ate_adjusted->point);
    return out;
  }
  std::size_t dte_offset() const { return 0; }
  std::size_t pte_offset() const { return dte.point.size(); }
  std::size_t pte_count() const { return pte.point.size() + (pte.zero_atom ? 1 : 0); }
  std::size_t ate_offset() const { return pte_offset() + pte_count(); }
};

inline CrossFitPredictions fit_nuisance(const ExperimentDataset& ds, const LocationGrid& grid,
                                        const NuisanceConfig& cfg, unsigned threads = 1) {
  return cross_fit(ds, grid, cfg, make_fold_plan(ds, cfg.folds, cfg.seed), threads);
}

// Point estimates on a row multiset. `pred` is required for the adjusted kind.
inline PointEstimates estimate_on_rows(const ExperimentDataset& ds, const LocationGrid& grid,
                                       const EstimationConfig& cfg, const CrossFitPredictions* pred,
                                       std::span<const std::size_t> rows) {
  PointEstimates out;
  if (cfg.kind == EstimatorKind::adjusted) {
    if (pred == nullptr) throw Error("adjusted estimation requires nuisance predictions");
    out.cdf = adjusted_cdf_pair(ds, grid, *pred, rows);
    out.ate_adjusted = ate_adjusted(ds, *pred, rows);
  } else {
    out.cdf = empirical_cdf_pair(ds, grid, rows);
  }
  const CdfPair& used = cfg.rearrange ? (out.cdf = isotonic_rearrange(out.cdf)) : out.cdf;
  out.dte = dte(used);
  out.pte = pte(used, cfg.span_for(grid));
  out.ate_unadjusted = ate(ds, rows);
  return out;
}

inline PointEstimates estimate(const ExperimentDataset& ds, const LocationGrid& grid, const EstimationConfig& cfg,
                               unsigned threads = 1, CrossFitPredictions* keep = nullptr) {
  std::optional<CrossFitPredictions> pred;
  if (cfg.kind == EstimatorKind::adjusted) pred = fit_nuisance(ds, grid, cfg.nuisance, threads);
  auto out = estimate_on_rows(ds, grid, cfg, pred ? &*pred : nullptr, all_rows(ds));
  if (keep && pred) *keep = std::move(*pred);
  return out;
}

struct Analysis {
  PointEstimates estimates;  // curves and ATEs carry bootstrap inference when it ran
  std::optional<BootstrapResult> bootstrap;
  std::size_t nonconverged_fits = 0;
};

// Full-sample estimation plus optional bootstrap. In refit mode each replicate
// redraws folds and refits every nuisance model on the resample; in frozen
// mode the full-sample out-of-fold predictions are reused and only the
// averages are recomputed.
inline Analysis analyze(const ExperimentDataset& ds, const LocationGrid& grid, const EstimationConfig& cfg,
                        const std::optional<BootstrapConfig>& boot, unsigned threads = 1) {
  Analysis result;
  CrossFitPredictions pred;
  result.estimates = estimate(ds, grid, cfg, threads, &pred);
  result.nonconverged_fits = pred.nonconverged_fits;
  if (!boot) return result;

  BootstrapConfig bcfg = *boot;
  bcfg.threads = threads;
  const auto point = result.estimates.flatten();
  const bool frozen = bcfg.nuisance_mode == NuisanceMode::frozen || cfg.kind == EstimatorKind::unadjusted;
  auto statistic = [&](std::span<const std::size_t> rows, std::uint64_t seed) {
    if (frozen) return estimate_on_rows(ds, grid, cfg, &pred, rows).flatten();
    const ExperimentDataset resample = ds.select(rows);
    EstimationConfig local = cfg;
    local.nuisance.seed = seed;
    const auto p = fit_nuisance(resample, grid, local.nuisance, 1);
    return estimate_on_rows(resample, grid, local, &p, all_rows(resample)).flatten();
  };
  result.bootstrap = bootstrap_rows(ds.treatment(), point, statistic, bcfg);

  auto& est = result.estimates;
  const auto& br = *result.bootstrap;
  est.dte = attach_inference(est.dte, br.slice(est.dte_offset(), est.dte.point.size()));
  est.pte = attach_inference(est.pte, br.slice(est.pte_offset(), est.pte_count()));
  est.ate_unadjusted.se = br.se[est.ate_offset()];
  if (est.ate_adjusted) est.ate_adjusted->se = br.se[est.ate_offset() + 1];
  return result;
}

}  // namespace dtelab
