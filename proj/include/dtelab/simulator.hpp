#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dtelab/config.hpp"
#include "dtelab/core_model.hpp"
#include "dtelab/csv.hpp"
#include "dtelab/nuisance.hpp"
#include "dtelab/parallel.hpp"

namespace dtelab {

// Synthetic viewing-time experiment.
//
// Covariates: an engagement tier t in {0..T-1} (weights `tier_weights`), a
// binary group flag g ~ Bernoulli(group_share), and `noise_columns` standard
// normal columns unrelated to the outcome.
//
// Given arm d and cell (t, g):
//   Y = 0                    with probability pi0 = logistic(zero_intercept + zero_slope*t + (zero_treat + zero_treat_group*g)*d)
//   otherwise the viewer stops in episode k in {1..K}, continuing past each
//   completed episode with probability c = logistic(cont_intercept + cont_slope*t + (cont_treat + cont_treat_group*g)*d);
//   within episode k the viewer stops exactly at the boundary k*L with
//   probability `boundary_share`, else uniformly on ((k-1)L, kL).
struct DgpSpec {
  std::size_t episodes = 4;
  std::int64_t episode_length = 1;
  std::vector<double> tier_weights{0.2, 0.2, 0.2, 0.2, 0.2};
  double group_share = 0.5;
  double zero_intercept = 7.5;
  double zero_slope = -5.0;
  double zero_treat = -1.0;
  double zero_treat_group = 0.0;
  double cont_intercept = -12.5;
  double cont_slope = 5.0;
  double cont_treat = 1.0;
  double cont_treat_group = 0.0;
  double boundary_share = 0.8;
  std::size_t noise_columns = 2;
  double rho = 0.1;

  void validate() const {
    if (episodes < 1) throw Error("dgp: episodes must be at least 1");
    if (episode_length < 1) throw Error("dgp: episode_length must be a positive integer");
    if (tier_weights.empty()) throw Error("dgp: at least one engagement tier is required");
    double total = 0.0;
    for (double w : tier_weights) {
      if (!(w >= 0.0)) throw Error("dgp: tier weights must be nonnegative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error("dgp: tier weights sum to " + format_number(total) + ", not 1");
    if (!(group_share >= 0.0 && group_share <= 1.0)) throw Error("dgp: group_share must lie in [0,1]");
    if (!(boundary_share >= 0.0 && boundary_share <= 1.0)) throw Error("dgp: boundary_share must lie in [0,1]");
    if (!(rho > 0.0 && rho < 1.0)) throw Error("dgp: rho must lie in (0,1)");
    for (int d = 0; d < 2; ++d)
      for (std::size_t t = 0; t < tier_weights.size(); ++t)
        for (int g = 0; g < 2; ++g) {
          const auto m = masses(d, t, g);
          double s = m.zero;
          for (std::size_t k = 0; k < episodes; ++k) s += m.boundary[k] + m.within[k];
          if (std::abs(s - 1.0) > 1e-9) throw Error("dgp: outcome masses do not sum to 1");
        }
  }

  struct CellMasses {
    double zero = 0.0;
    std::vector<double> boundary;  // atom at k*L, k = 1..K
    std::vector<double> within;    // uniform mass on ((k-1)L, kL)
  };

  double zero_probability(int d, std::size_t t, int g) const {
    return logistic(zero_intercept + zero_slope * static_cast<double>(t) + (zero_treat + zero_treat_group * g) * d);
  }
  double continue_probability(int d, std::size_t t, int g) const {
    return logistic(cont_intercept + cont_slope * static_cast<double>(t) + (cont_treat + cont_treat_group * g) * d);
  }

  CellMasses masses(int d, std::size_t t, int g) const {
    CellMasses m;
    m.zero = zero_probability(d, t, g);
    const double c = continue_probability(d, t, g);
    m.boundary.resize(episodes);
    m.within.resize(episodes);
    double reach = 1.0 - m.zero;  // probability of starting episode k
    for (std::size_t k = 0; k < episodes; ++k) {
      const double stop = k + 1 < episodes ? reach * (1.0 - c) : reach;
      m.boundary[k] = stop * boundary_share;
      m.within[k] = stop * (1.0 - boundary_share);
      reach *= c;
    }
    return m;
  }

  // (cell weight, tier, group) over all covariate cells with positive weight.
  template <class Fn>
  void for_each_cell(Fn&& fn) const {
    for (std::size_t t = 0; t < tier_weights.size(); ++t)
      for (int g = 0; g < 2; ++g) {
        const double w = tier_weights[t] * (g == 1 ? group_share : 1.0 - group_share);
        if (w > 0.0) fn(w, t, g);
      }
  }

  std::vector<std::string> covariate_names() const {
    std::vector<std::string> names{"tier", "gender"};
    for (std::size_t k = 0; k < noise_columns; ++k) names.push_back("noise" + std::to_string(k + 1));
    return names;
  }
};

// Conditional CDF given arm and covariate cell.
inline double conditional_cdf(const DgpSpec& spec, int d, std::size_t t, int g, double y) {
  if (y < 0.0) return 0.0;
  const auto m = spec.masses(d, t, g);
  const double L = static_cast<double>(spec.episode_length);
  double f = m.zero;
  for (std::size_t k = 0; k < spec.episodes; ++k) {
    const double lo = static_cast<double>(k) * L;
    const double hi = lo + L;
    if (y >= hi) f += m.boundary[k] + m.within[k];
    else if (y > lo) f += m.within[k] * (y - lo) / L;
  }
  return std::min(f, 1.0);
}

inline double conditional_mean(const DgpSpec& spec, int d, std::size_t t, int g) {
  const auto m = spec.masses(d, t, g);
  const double L = static_cast<double>(spec.episode_length);
  double mu = 0.0;
  for (std::size_t k = 0; k < spec.episodes; ++k) {
    const double hi = static_cast<double>(k + 1) * L;
    mu += m.boundary[k] * hi + m.within[k] * (hi - 0.5 * L);
  }
  return mu;
}

// Marginal F_{Y(d)}(y): exact finite mixture over covariate cells.
inline double true_cdf(const DgpSpec& spec, int d, double y) {
  double f = 0.0;
  spec.for_each_cell([&](double w, std::size_t t, int g) { f += w * conditional_cdf(spec, d, t, g, y); });
  return std::min(f, 1.0);
}

inline double true_mean(const DgpSpec& spec, int d) {
  double mu = 0.0;
  spec.for_each_cell([&](double w, std::size_t t, int g) { mu += w * conditional_mean(spec, d, t, g); });
  return mu;
}

struct TrueEffects {
  std::vector<double> f1;
  std::vector<double> f0;
  std::vector<double> dte;
  std::vector<double> pte;  // bins (y_j, y_j + span]
  double pte_zero_atom = 0.0;
  double ate = 0.0;
};

inline TrueEffects true_effects(const DgpSpec& spec, const LocationGrid& grid, std::int64_t span) {
  if (span <= 0 || span % grid.step() != 0) throw Error("PTE span must be a positive multiple of the grid step");
  const auto s = static_cast<std::size_t>(span / grid.step());
  if (s > grid.intervals()) throw Error("PTE span exceeds the grid range");
  TrueEffects te;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    te.f1.push_back(true_cdf(spec, 1, grid.location(j)));
    te.f0.push_back(true_cdf(spec, 0, grid.location(j)));
    te.dte.push_back(te.f1.back() - te.f0.back());
  }
  for (std::size_t j = 0; j + s < grid.size(); ++j)
    te.pte.push_back((te.f1[j + s] - te.f1[j]) - (te.f0[j + s] - te.f0[j]));
  te.pte_zero_atom = te.dte[0];
  te.ate = true_mean(spec, 1) - true_mean(spec, 0);
  return te;
}

namespace detail {

// Uniform on (0,1) from the top 53 bits.
inline double open_uniform(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = open_uniform(rng);
  const double u2 = open_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline constexpr std::size_t kSimBlock = 4096;

}  // namespace detail

// Units are generated in fixed blocks of 4096, each from its own derived seed,
// so the dataset depends only on (spec, n, seed), not on the thread count.
inline ExperimentDataset generate(const DgpSpec& spec, std::size_t n, std::uint64_t seed, unsigned threads = 1) {
  spec.validate();
  if (n < 1) throw Error("simulate: n must be at least 1");
  const std::size_t p = 2 + spec.noise_columns;
  std::vector<std::uint8_t> d(n);
  std::vector<double> y(n);
  Matrix x(n, p);
  std::vector<double> tier_cdf;
  double acc = 0.0;
  for (double w : spec.tier_weights) tier_cdf.push_back(acc += w);
  const double L = static_cast<double>(spec.episode_length);

  const std::size_t blocks = (n + detail::kSimBlock - 1) / detail::kSimBlock;
  parallel_for(blocks, threads, [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(seed, {0x51A1, b}));
    const std::size_t end = std::min(n, (b + 1) * detail::kSimBlock);
    for (std::size_t i = b * detail::kSimBlock; i < end; ++i) {
      const int di = detail::open_uniform(rng) < spec.rho ? 1 : 0;
      const double ut = detail::open_uniform(rng) * acc;
      auto t = static_cast<std::size_t>(std::upper_bound(tier_cdf.begin(), tier_cdf.end(), ut) - tier_cdf.begin());
      t = std::min(t, spec.tier_weights.size() - 1);
      while (spec.tier_weights[t] == 0.0 && t > 0) --t;
      const int g = detail::open_uniform(rng) < spec.group_share ? 1 : 0;
      x(i, 0) = static_cast<double>(t);
      x(i, 1) = static_cast<double>(g);
      for (std::size_t k = 0; k < spec.noise_columns; ++k) x(i, 2 + k) = detail::standard_normal(rng);

      double yi = 0.0;
      if (detail::open_uniform(rng) >= spec.zero_probability(di, t, g)) {
        const double c = spec.continue_probability(di, t, g);
        std::size_t k = 1;
        while (k < spec.episodes && detail::open_uniform(rng) < c) ++k;
        const double hi = static_cast<double>(k) * L;
        yi = detail::open_uniform(rng) < spec.boundary_share ? hi : hi - L + L * detail::open_uniform(rng);
      }
      d[i] = static_cast<std::uint8_t>(di);
      y[i] = yi;
    }
  });
  return ExperimentDataset::create(std::move(d), std::move(y), std::move(x), spec.covariate_names(), spec.rho);
}

// Reads dgp.* keys; missing keys keep their defaults.
inline DgpSpec dgp_from_config(const KeyValueConfig& cfg) {
  DgpSpec s;
  s.episodes = static_cast<std::size_t>(cfg.get_int("dgp.episodes", static_cast<std::int64_t>(s.episodes)));
  s.episode_length = cfg.get_int("dgp.episode_length", s.episode_length);
  s.tier_weights = cfg.get_list("dgp.tier_weights", s.tier_weights);
  s.group_share = cfg.get_double("dgp.group_share", s.group_share);
  s.zero_intercept = cfg.get_double("dgp.zero_intercept", s.zero_intercept);
  s.zero_slope = cfg.get_double("dgp.zero_slope", s.zero_slope);
  s.zero_treat = cfg.get_double("dgp.zero_treat", s.zero_treat);
  s.zero_treat_group = cfg.get_double("dgp.zero_treat_group", s.zero_treat_group);
  s.cont_intercept = cfg.get_double("dgp.cont_intercept", s.cont_intercept);
  s.cont_slope = cfg.get_double("dgp.cont_slope", s.cont_slope);
  s.cont_treat = cfg.get_double("dgp.cont_treat", s.cont_treat);
  s.cont_treat_group = cfg.get_double("dgp.cont_treat_group", s.cont_treat_group);
  s.boundary_share = cfg.get_double("dgp.boundary_share", s.boundary_share);
  s.noise_columns = static_cast<std::size_t>(cfg.get_int("dgp.noise_columns", static_cast<std::int64_t>(s.noise_columns)));
  s.rho = cfg.get_double("dgp.rho", s.rho);
  s.validate();
  return s;
}

inline KeyValueConfig dgp_to_config(const DgpSpec& s) {
  KeyValueConfig cfg;
  cfg.set("dgp.episodes", std::to_string(s.episodes));
  cfg.set("dgp.episode_length", std::to_string(s.episode_length));
  std::string weights;
  for (std::size_t k = 0; k < s.tier_weights.size(); ++k)
    weights += (k ? "," : "") + format_number(s.tier_weights[k]);
  cfg.set("dgp.tier_weights", weights);
  cfg.set("dgp.group_share", format_number(s.group_share));
  cfg.set("dgp.zero_intercept", format_number(s.zero_intercept));
  cfg.set("dgp.zero_slope", format_number(s.zero_slope));
  cfg.set("dgp.zero_treat", format_number(s.zero_treat));
  cfg.set("dgp.zero_treat_group", format_number(s.zero_treat_group));
  cfg.set("dgp.cont_intercept", format_number(s.cont_intercept));
  cfg.set("dgp.cont_slope", format_number(s.cont_slope));
  cfg.set("dgp.cont_treat", format_number(s.cont_treat));
  cfg.set("dgp.cont_treat_group", format_number(s.cont_treat_group));
  cfg.set("dgp.boundary_share", format_number(s.boundary_share));
  cfg.set("dgp.noise_columns", std::to_string(s.noise_columns));
  cfg.set("dgp.rho", format_number(s.rho));
  return cfg;
}

}  // namespace dtelab
