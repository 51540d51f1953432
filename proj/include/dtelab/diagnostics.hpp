#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dtelab/core_model.hpp"

namespace dtelab {

struct BalanceRow {
  std::string variable;
  double mean_diff = 0.0;  // treated minus control
  double se = 0.0;         // sqrt(s1^2/n1 + s0^2/n0)
  double t = 0.0;
  bool degenerate = false;  // se == 0; t is reported as 0
};

// Per-covariate difference in arm means with a Welch (unpooled) standard error.
inline std::vector<BalanceRow> balance_table(const ExperimentDataset& ds) {
  const std::size_t p = ds.covariate_count();
  std::vector<BalanceRow> rows(p);
  for (std::size_t k = 0; k < p; ++k) {
    double sum[2] = {0.0, 0.0};
    double n[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const int d = ds.treatment()[i];
      sum[d] += ds.covariates()(i, k);
      n[d] += 1.0;
    }
    const double mean[2] = {sum[0] / n[0], sum[1] / n[1]};
    double ss[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const int d = ds.treatment()[i];
      const double dev = ds.covariates()(i, k) - mean[d];
      ss[d] += dev * dev;
    }
    double var_of_mean = 0.0;
    for (int d = 0; d < 2; ++d)
      if (n[d] > 1.0) var_of_mean += ss[d] / (n[d] - 1.0) / n[d];
    auto& row = rows[k];
    row.variable = ds.covariate_names()[k];
    row.mean_diff = mean[1] - mean[0];
    row.se = std::sqrt(var_of_mean);
    row.degenerate = !(row.se > 0.0);
    row.t = row.degenerate ? 0.0 : row.mean_diff / row.se;
  }
  return rows;
}

}  // namespace dtelab
