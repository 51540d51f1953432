#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "dtelab/estimators.hpp"
#include "dtelab/pipeline.hpp"
#include "dtelab/simulator.hpp"

using namespace dtelab;
using Catch::Approx;

namespace {

ExperimentDataset make(std::vector<std::uint8_t> d, std::vector<double> y) {
  const std::size_t n = d.size();
  Matrix x(n, 1);
  for (std::size_t i = 0; i < n; ++i) x(i, 0) = static_cast<double>(i % 3);
  return ExperimentDataset::create(std::move(d), std::move(y), std::move(x), {"x"}, 0.5);
}

// Brute-force ECDF of arm d at y.
double ecdf(const ExperimentDataset& ds, int d, double y) {
  double below = 0.0;
  double n = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.treatment()[i] == d) {
      n += 1.0;
      below += ds.outcome()[i] <= y ? 1.0 : 0.0;
    }
  return below / n;
}

CrossFitPredictions constant_predictions(const ExperimentDataset& ds, const LocationGrid& grid,
                                         const std::array<std::vector<double>, 2>& cdf_values, std::array<double, 2> mu) {
  auto p = CrossFitPredictions::empty(grid, ds.size());
  for (int d = 0; d < 2; ++d) {
    for (std::size_t j = 0; j < grid.size(); ++j) std::ranges::fill(p.cdf[d][j], cdf_values[d][j]);
    std::ranges::fill(p.mean[d], mu[d]);
  }
  return p;
}

}  // namespace

TEST_CASE("worked example: two units per arm") {
  // Treated {1,2}, control {2,3} on grid 0..3.
  auto ds = make({1, 1, 0, 0}, {1, 2, 2, 3});
  LocationGrid grid(1, 3);
  auto cdf = empirical_cdf_pair(ds, grid);
  CHECK(cdf.f1 == std::vector<double>{0, 0.5, 1, 1});
  CHECK(cdf.f0 == std::vector<double>{0, 0, 0.5, 1});
  auto d = dte(cdf);
  CHECK(d.point == std::vector<double>{0, 0.5, 0.5, 0});
  auto p = pte(cdf, 1);
  CHECK(p.point == std::vector<double>{0.5, 0, -0.5});
  REQUIRE(p.zero_atom);
  CHECK(p.zero_atom->point == 0.0);
  CHECK(ate(ds).point == -1.0);
  CHECK(ate_from_dte(d, 1) == -1.0);
}

TEST_CASE("all-zero outcomes give zero effects") {
  auto ds = make({1, 0, 1, 0, 0}, {0, 0, 0, 0, 0});
  LocationGrid grid(1, 5);
  auto cdf = empirical_cdf_pair(ds, grid);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    CHECK(cdf.f1[j] == 1.0);
    CHECK(cdf.f0[j] == 1.0);
  }
  auto p = pte(cdf, 1);
  CHECK(p.zero_atom->point == 0.0);
  for (double v : p.point) CHECK(v == 0.0);
}

TEST_CASE("identical arms give zero DTE everywhere") {
  auto ds = make({1, 0, 1, 0, 1, 0}, {3, 3, 0, 0, 7.5, 7.5});
  LocationGrid grid(2, 5);
  for (double v : dte(empirical_cdf_pair(ds, grid)).point) CHECK(v == 0.0);
  CHECK(ate(ds).point == 0.0);
}

TEST_CASE("constant nuisance reproduces the empirical CDF") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> yv(0, 9);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::uint8_t> d;
    std::vector<double> y;
    for (int i = 0; i < 30; ++i) {
      d.push_back(i % 3 == 0 || i == 1);
      y.push_back(yv(rng));
    }
    auto ds = make(d, y);
    LocationGrid grid(1, 9);
    std::array<std::vector<double>, 2> c{std::vector<double>(grid.size()), std::vector<double>(grid.size())};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& arm : c)
      for (auto& v : arm) v = u(rng);
    auto pred = constant_predictions(ds, grid, c, {u(rng) * 5, u(rng) * 5});
    auto adj = adjusted_cdf_pair(ds, grid, pred);
    auto emp = empirical_cdf_pair(ds, grid);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      CHECK(std::abs(adj.f1[j] - emp.f1[j]) <= 1e-12);
      CHECK(std::abs(adj.f0[j] - emp.f0[j]) <= 1e-12);
    }
    CHECK(std::abs(ate_adjusted(ds, pred).point - ate(ds).point) <= 1e-12);
  }
}

TEST_CASE("memorised nuisance yields the pooled ECDF") {
  // If m_d(y, X_i) = 1{Y_i <= y} for every unit, the residual term vanishes
  // and both arms estimate the pooled empirical CDF.
  auto ds = make({1, 0, 0, 1, 0, 1, 0}, {0, 1, 2, 2, 4, 5, 1});
  LocationGrid grid(1, 5);
  auto p = CrossFitPredictions::empty(grid, ds.size());
  for (int d = 0; d < 2; ++d)
    for (std::size_t j = 0; j < grid.size(); ++j)
      for (std::size_t i = 0; i < ds.size(); ++i) p.cdf[d][j][i] = ds.outcome()[i] <= grid.location(j) ? 1.0 : 0.0;
  auto adj = adjusted_cdf_pair(ds, grid, p);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double pooled = 0.0;
    for (double y : ds.outcome()) pooled += y <= grid.location(j);
    pooled /= static_cast<double>(ds.size());
    CHECK(adj.f1[j] == Approx(pooled).margin(1e-12));
    CHECK(adj.f0[j] == Approx(pooled).margin(1e-12));
  }
}

TEST_CASE("DTE and PTE identities") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 40.0);
  for (int rep = 0; rep < 25; ++rep) {
    std::vector<std::uint8_t> d;
    std::vector<double> y;
    for (int i = 0; i < 50; ++i) {
      d.push_back(i % 2);
      y.push_back(std::floor(u(rng)));
    }
    auto ds = make(d, y);
    LocationGrid grid(2, 12);
    auto cdf = empirical_cdf_pair(ds, grid);
    auto dc = dte(cdf);
    for (std::size_t j = 0; j < grid.size(); ++j) CHECK(dc.point[j] == ecdf(ds, 1, grid.location(j)) - ecdf(ds, 0, grid.location(j)));

    // Telescoping: PTE bins at span h sum to DTE(y_J) - DTE(y_0).
    auto pc = pte(cdf, 2);
    const double sum = std::accumulate(pc.point.begin(), pc.point.end(), 0.0);
    CHECK(std::abs(sum - (dc.point.back() - dc.point.front())) <= 1e-12);
    CHECK(pc.zero_atom->point == dc.point[0]);

    // Wider span: bin j equals DTE(y_{j+s}) - DTE(y_j).
    auto wide = pte(cdf, 6);
    REQUIRE(wide.point.size() == grid.size() - 3);
    for (std::size_t j = 0; j < wide.point.size(); ++j)
      CHECK(wide.point[j] == Approx(dc.point[j + 3] - dc.point[j]).margin(1e-15));
  }
}

TEST_CASE("PTE span validation") {
  auto ds = make({1, 0}, {1, 2});
  auto cdf = empirical_cdf_pair(ds, LocationGrid(2, 3));
  CHECK_THROWS_WITH(pte(cdf, 3), Catch::Matchers::ContainsSubstring("multiple"));
  CHECK_THROWS(pte(cdf, 0));
  CHECK_THROWS_WITH(pte(cdf, 8), Catch::Matchers::ContainsSubstring("exceeds"));
  CHECK(pte(cdf, 6).point.size() == 1);
}

TEST_CASE("ATE on small samples") {
  auto ds = make({1, 1, 0, 0}, {2, 4, 1, 3});
  auto r = ate(ds);
  CHECK(r.point == 1.0);
  CHECK(r.control_mean == 2.0);

  auto one = make({1, 0}, {2, 0});
  LocationGrid grid(1, 2);
  CHECK(ate_from_dte(dte(empirical_cdf_pair(one, grid)), 1) == 2.0);
}

TEST_CASE("ate_from_dte matches the ATE for grid-supported outcomes") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> k(0, 10);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::uint8_t> d;
    std::vector<double> y;
    for (int i = 0; i < 40; ++i) {
      d.push_back(i % 4 == 0);
      y.push_back(3.0 * k(rng));
    }
    auto ds = make(d, y);
    LocationGrid grid(3, 10);
    REQUIRE(outcomes_on_grid(ds, grid));
    CHECK(std::abs(ate_from_dte(dte(empirical_cdf_pair(ds, grid)), 3) - ate(ds).point) <= 1e-12);
  }
}

TEST_CASE("missing predictions are reported") {
  auto ds = make({1, 0, 1, 0}, {0, 1, 2, 3});
  LocationGrid grid(1, 3);
  auto p = CrossFitPredictions::empty(grid, ds.size());
  CHECK_THROWS_WITH(adjusted_cdf_pair(ds, grid, p), Catch::Matchers::ContainsSubstring("missing nuisance prediction"));
  CHECK_THROWS_WITH(ate_adjusted(ds, p), Catch::Matchers::ContainsSubstring("missing mean nuisance"));
}

TEST_CASE("adjusted estimates clamp and count out-of-range values") {
  auto ds = make({1, 0, 1, 0}, {0, 0, 5, 5});
  LocationGrid grid(1, 5);
  auto p = CrossFitPredictions::empty(grid, ds.size());
  // Predictions that push the treated estimate below zero at y = 0.
  for (int d = 0; d < 2; ++d)
    for (std::size_t j = 0; j < grid.size(); ++j)
      for (std::size_t i = 0; i < ds.size(); ++i) p.cdf[d][j][i] = ds.treatment()[i] == 1 ? 0.99 : 0.0;
  auto adj = adjusted_cdf_pair(ds, grid, p);
  for (double v : adj.f1) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(adj.clamped_f1 + adj.clamped_f0 > 0);
}

TEST_CASE("estimates are invariant to row order") {
  std::mt19937_64 rng(12);
  std::vector<std::uint8_t> d;
  std::vector<double> y;
  for (int i = 0; i < 60; ++i) {
    d.push_back(i % 3 == 0);
    y.push_back(static_cast<double>(rng() % 15));
  }
  auto ds = make(d, y);
  std::vector<std::size_t> perm = all_rows(ds);
  std::ranges::shuffle(perm, rng);
  LocationGrid grid(1, 14);
  auto a = empirical_cdf_pair(ds, grid);
  auto b = empirical_cdf_pair(ds, grid, perm);
  CHECK(a.f1 == b.f1);
  CHECK(a.f0 == b.f0);
  auto shuffled = ds.select(perm);
  auto c = empirical_cdf_pair(shuffled, grid);
  CHECK(a.f1 == c.f1);
  CHECK(ate(ds).point == Approx(ate(shuffled).point).margin(1e-12));
}

TEST_CASE("isotonic rearrangement") {
  std::vector<double> v{0.1, 0.3, 0.2, 0.2, 0.5, 0.4};
  auto f = isotonic_fit(v);
  CHECK(std::ranges::is_sorted(f));
  CHECK(f[1] == Approx(0.7 / 3));
  CHECK(f[4] == Approx(0.45));
  CHECK(std::accumulate(f.begin(), f.end(), 0.0) == Approx(std::accumulate(v.begin(), v.end(), 0.0)));
  std::vector<double> sorted{0, 0.2, 0.2, 1};
  CHECK(isotonic_fit(sorted) == sorted);
}

TEST_CASE("empirical DTE detects a known mass shift in simulated data") {
  // Moving zero-outcome mass lowers F1(0) by the shift in pi0.
  DgpSpec spec;
  spec.zero_treat = -0.5;
  auto ds = generate(spec, 40000, 3);
  LocationGrid grid(1, 4);
  auto te = true_effects(spec, grid, 1);
  auto est = dte(empirical_cdf_pair(ds, grid));
  // Standard error of a difference of proportions with 4k treated units.
  CHECK(est.point[0] == Approx(te.dte[0]).margin(0.03));
  CHECK(te.dte[0] < 0.0);
}

TEST_CASE("pipeline estimate runs both estimator kinds") {
  DgpSpec spec;
  auto ds = generate(spec, 3000, 5);
  LocationGrid grid(1, 4);
  EstimationConfig cfg;
  cfg.kind = EstimatorKind::unadjusted;
  auto un = estimate(ds, grid, cfg);
  CHECK(!un.ate_adjusted);
  cfg.kind = EstimatorKind::adjusted;
  cfg.nuisance.learner = LearnerKind::logistic;
  auto adj = estimate(ds, grid, cfg);
  REQUIRE(adj.ate_adjusted);
  CHECK(adj.ate_adjusted->control_mean == un.ate_unadjusted.control_mean);
  CHECK(adj.flatten().size() == grid.size() + (grid.size() - 1) + 1 + 2);
}
