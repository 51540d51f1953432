#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dtelab/core_model.hpp"
#include "dtelab/nuisance.hpp"

namespace dtelab {

// Row views let the same estimators run on a bootstrap resample (indices into
// the original dataset, repeats allowed) without copying the data.
inline std::vector<std::size_t> all_rows(const ExperimentDataset& ds) {
  std::vector<std::size_t> rows(ds.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

// Smallest j with y <= y_j, or grid.size() when y lies above the grid.
inline std::size_t grid_bin(const LocationGrid& grid, double y) {
  if (y <= 0.0) return 0;
  const double h = static_cast<double>(grid.step());
  auto j = static_cast<std::size_t>(std::min(std::ceil(y / h), static_cast<double>(grid.size())));
  while (j > 0 && y <= grid.location(j - 1)) --j;
  while (j < grid.size() && y > grid.location(j)) ++j;
  return j;
}

inline bool outcomes_on_grid(const ExperimentDataset& ds, const LocationGrid& grid) {
  return std::ranges::all_of(ds.outcome(), [&](double y) {
    const std::size_t j = grid_bin(grid, y);
    return j < grid.size() && grid.location(j) == y;
  });
}

inline CdfPair empirical_cdf_pair(const ExperimentDataset& ds, const LocationGrid& grid,
                                  std::span<const std::size_t> rows) {
  const std::size_t J1 = grid.size();
  std::array<std::vector<double>, 2> counts{std::vector<double>(J1 + 1, 0.0), std::vector<double>(J1 + 1, 0.0)};
  std::array<double, 2> n{0.0, 0.0};
  for (auto i : rows) {
    const int d = ds.treatment()[i];
    counts[static_cast<std::size_t>(d)][grid_bin(grid, ds.outcome()[i])] += 1.0;
    n[static_cast<std::size_t>(d)] += 1.0;
  }
  if (n[0] == 0.0 || n[1] == 0.0) throw Error("empirical CDF needs both arms nonempty");
  CdfPair out{grid, std::vector<double>(J1), std::vector<double>(J1), EstimatorKind::unadjusted};
  for (int d = 0; d < 2; ++d) {
    auto& f = d == 1 ? out.f1 : out.f0;
    double cum = 0.0;
    for (std::size_t j = 0; j < J1; ++j) {
      cum += counts[static_cast<std::size_t>(d)][j];
      f[j] = cum / n[static_cast<std::size_t>(d)];
    }
  }
  return out;
}

inline CdfPair empirical_cdf_pair(const ExperimentDataset& ds, const LocationGrid& grid) {
  return empirical_cdf_pair(ds, grid, all_rows(ds));
}

// Regression-adjusted marginal CDF for each arm:
//   F_d(y) = mean_{D_i=d}(1{Y_i <= y} - m_d(y, X_i)) + mean_all(m_d(y, X_i)),
// then clamped to [0,1] with the number of clamped values recorded.
inline CdfPair adjusted_cdf_pair(const ExperimentDataset& ds, const LocationGrid& grid, const CrossFitPredictions& pred,
                                 std::span<const std::size_t> rows) {
  const std::size_t J1 = grid.size();
  if (pred.grid != grid || pred.units != ds.size() || pred.cdf[0].size() != J1 || pred.cdf[1].size() != J1)
    throw Error("nuisance predictions do not match the dataset and grid");
  CdfPair out{grid, std::vector<double>(J1), std::vector<double>(J1), EstimatorKind::adjusted};
  std::array<double, 2> n_arm{0.0, 0.0};
  for (auto i : rows) n_arm[ds.treatment()[i]] += 1.0;
  if (n_arm[0] == 0.0 || n_arm[1] == 0.0) throw Error("adjusted CDF needs both arms nonempty");
  const double n = static_cast<double>(rows.size());
  for (int d = 0; d < 2; ++d) {
    auto& f = d == 1 ? out.f1 : out.f0;
    auto& clamped = d == 1 ? out.clamped_f1 : out.clamped_f0;
    for (std::size_t j = 0; j < J1; ++j) {
      const auto& m = pred.cdf[static_cast<std::size_t>(d)][j];
      const double y = grid.location(j);
      double residual = 0.0;
      double augment = 0.0;
      for (auto i : rows) {
        const double mi = m[i];
        if (std::isnan(mi))
          throw Error("missing nuisance prediction for arm " + std::to_string(d) + ", location " +
                      std::to_string(static_cast<long long>(y)) + ", unit " + std::to_string(i));
        augment += mi;
        if (ds.treatment()[i] == d) residual += (ds.outcome()[i] <= y ? 1.0 : 0.0) - mi;
      }
      const double v = residual / n_arm[static_cast<std::size_t>(d)] + augment / n;
      const double c = std::clamp(v, 0.0, 1.0);
      if (c != v) ++clamped;
      f[j] = c;
    }
  }
  return out;
}

inline CdfPair adjusted_cdf_pair(const ExperimentDataset& ds, const LocationGrid& grid,
                                 const CrossFitPredictions& pred) {
  return adjusted_cdf_pair(ds, grid, pred, all_rows(ds));
}

// Pool-adjacent-violators: the closest non-decreasing sequence in least squares.
inline std::vector<double> isotonic_fit(std::span<const double> v) {
  struct Block {
    double sum;
    double count;
  };
  std::vector<Block> blocks;
  for (double x : v) {
    blocks.push_back({x, 1.0});
    while (blocks.size() > 1) {
      const auto& b = blocks.back();
      const auto& a = blocks[blocks.size() - 2];
      if (a.sum / a.count <= b.sum / b.count) break;
      Block merged{a.sum + b.sum, a.count + b.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& b : blocks) out.insert(out.end(), static_cast<std::size_t>(b.count), b.sum / b.count);
  return out;
}

inline CdfPair isotonic_rearrange(CdfPair cdf) {
  cdf.f1 = isotonic_fit(cdf.f1);
  cdf.f0 = isotonic_fit(cdf.f0);
  return cdf;
}

inline EffectCurve dte(const CdfPair& cdf) {
  EffectCurve out;
  out.grid = cdf.grid;
  out.kind = EffectKind::dte;
  out.point.resize(cdf.f1.size());
  for (std::size_t j = 0; j < out.point.size(); ++j) out.point[j] = cdf.f1[j] - cdf.f0[j];
  return out;
}

// Bins (y_j, y_j + span] for every j with y_j + span <= y_J, plus the atom at 0.
inline EffectCurve pte(const CdfPair& cdf, std::int64_t span) {
  const std::int64_t h = cdf.grid.step();
  if (span <= 0 || span % h != 0)
    throw Error("PTE span " + std::to_string(span) + " is not a positive multiple of the grid step " + std::to_string(h));
  const auto s = static_cast<std::size_t>(span / h);
  if (s > cdf.grid.intervals())
    throw Error("PTE span " + std::to_string(span) + " exceeds the grid range " +
                std::to_string(static_cast<long long>(cdf.grid.max_location())));
  EffectCurve out;
  out.grid = cdf.grid;
  out.kind = EffectKind::pte;
  out.span = span;
  out.point.resize(cdf.grid.size() - s);
  for (std::size_t j = 0; j < out.point.size(); ++j)
    out.point[j] = (cdf.f1[j + s] - cdf.f1[j]) - (cdf.f0[j + s] - cdf.f0[j]);
  out.zero_atom.emplace();
  out.zero_atom->point = cdf.f1[0] - cdf.f0[0];
  return out;
}

inline AteResult ate(const ExperimentDataset& ds, std::span<const std::size_t> rows) {
  std::array<double, 2> sum{0.0, 0.0};
  std::array<double, 2> n{0.0, 0.0};
  for (auto i : rows) {
    sum[ds.treatment()[i]] += ds.outcome()[i];
    n[ds.treatment()[i]] += 1.0;
  }
  if (n[0] == 0.0 || n[1] == 0.0) throw Error("ATE needs both arms nonempty");
  const double m0 = sum[0] / n[0];
  return {sum[1] / n[1] - m0, 0.0, EstimatorKind::unadjusted, m0};
}

inline AteResult ate(const ExperimentDataset& ds) { return ate(ds, all_rows(ds)); }

// E[Y(d)] = mean_{D_i=d}(Y_i - m_d(X_i)) + mean_all(m_d(X_i)).
inline AteResult ate_adjusted(const ExperimentDataset& ds, const CrossFitPredictions& pred,
                              std::span<const std::size_t> rows) {
  if (pred.units != ds.size() || pred.mean[0].size() != ds.size() || pred.mean[1].size() != ds.size())
    throw Error("mean nuisance predictions do not cover the dataset");
  std::array<double, 2> residual{0.0, 0.0};
  std::array<double, 2> augment{0.0, 0.0};
  std::array<double, 2> n_arm{0.0, 0.0};
  std::array<double, 2> raw{0.0, 0.0};
  for (auto i : rows) {
    const int di = ds.treatment()[i];
    n_arm[static_cast<std::size_t>(di)] += 1.0;
    raw[static_cast<std::size_t>(di)] += ds.outcome()[i];
    for (int d = 0; d < 2; ++d) {
      const double mi = pred.mean[static_cast<std::size_t>(d)][i];
      if (std::isnan(mi))
        throw Error("missing mean nuisance prediction for arm " + std::to_string(d) + ", unit " + std::to_string(i));
      augment[static_cast<std::size_t>(d)] += mi;
      if (di == d) residual[static_cast<std::size_t>(d)] += ds.outcome()[i] - mi;
    }
  }
  if (n_arm[0] == 0.0 || n_arm[1] == 0.0) throw Error("ATE needs both arms nonempty");
  const double n = static_cast<double>(rows.size());
  std::array<double, 2> mu{};
  for (std::size_t d = 0; d < 2; ++d) mu[d] = residual[d] / n_arm[d] + augment[d] / n;
  return {mu[1] - mu[0], 0.0, EstimatorKind::adjusted, raw[0] / n_arm[0]};
}

inline AteResult ate_adjusted(const ExperimentDataset& ds, const CrossFitPredictions& pred) {
  return ate_adjusted(ds, pred, all_rows(ds));
}

// -h * sum_{j<J} DTE(y_j). Equals the ATE exactly when every outcome lies on a
// grid point in [0, y_J] (E[Y] = sum_j h (1 - F(y_j)) for such outcomes).
inline double ate_from_dte(const EffectCurve& dte_curve, std::int64_t step) {
  if (dte_curve.kind != EffectKind::dte) throw Error("ate_from_dte expects a DTE curve");
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < dte_curve.point.size(); ++j) s += dte_curve.point[j];
  return -static_cast<double>(step) * s;
}

}  // namespace dtelab
