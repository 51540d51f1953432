#include <catch_amalgamated.hpp>

#include "dtelab/config.hpp"
#include "dtelab/csv.hpp"
#include "dtelab/estimators.hpp"
#include "dtelab/inference.hpp"
#include "dtelab/report.hpp"

using namespace dtelab;

TEST_CASE("number formatting") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-0.0) == "0");
  CHECK(format_number(3.0) == "3");
  CHECK(format_number(std::nan("")) == "NA");
  const double v = 0.1 + 0.2;
  CHECK(detail::parse_double(format_number(v)) == v);
}

TEST_CASE("csv parsing") {
  auto t = parse_csv("\xEF\xBB\xBF" "d, y ,x\r\n1,2,\"a,b\"\r\n\r\n0,3,\"q\"\"\"\n", "in.csv");
  CHECK(t.header == std::vector<std::string>{"d", "y", "x"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][2] == "a,b");
  CHECK(t.rows[1][2] == "q\"");
  CHECK(t.lines == std::vector<std::size_t>{2, 4});
  CHECK_THROWS_WITH(parse_csv("d,y\n1,\"2\n"), Catch::Matchers::ContainsSubstring(":2:"));
  CHECK_THROWS(parse_csv(""));
}

TEST_CASE("dataset csv round trip") {
  Matrix x(3, 1);
  x(0, 0) = 0.5;
  x(1, 0) = -1.25;
  x(2, 0) = 1e-7;
  auto ds = ExperimentDataset::create({1, 0, 1}, {0, 12.5, 3}, x, {"age"}, 0.5);
  auto back = validate_dataset(parse_csv(dataset_to_csv(ds)), 0.5);
  CHECK(back == ds);
}

TEST_CASE("config parsing") {
  auto cfg = KeyValueConfig::parse(
      "# header\n"
      "nuisance.learner = logistic   # trailing\n"
      "inference.replications=200\n"
      "\n"
      "dgp.tier_weights = 0.5, 0.5\n"
      "estimator.rearrange = yes\n"
      "inference.replications = 300\n",
      "run.cfg");
  CHECK(cfg.get("nuisance.learner", "") == "logistic");
  CHECK(cfg.get_int("inference.replications", 0) == 300);
  CHECK(cfg.get_list("dgp.tier_weights", {}) == std::vector<double>{0.5, 0.5});
  CHECK(cfg.get_bool("estimator.rearrange", false));
  CHECK(cfg.get_double("missing", 2.5) == 2.5);
  CHECK(cfg.unused_keys().empty());
  CHECK_THROWS_WITH(KeyValueConfig::parse("a = 1\nnot a pair\n", "run.cfg"),
                    Catch::Matchers::StartsWith("run.cfg:2:"));
  auto bad = KeyValueConfig::parse("grid.step = two");
  CHECK_THROWS(bad.get_int("grid.step", 1));
  CHECK_THROWS(KeyValueConfig::parse("x = 1.5").get_int("x", 0));
  CHECK_THROWS(KeyValueConfig::parse("s = -4").get_seed("s", 0));
}

namespace {

struct Curves {
  CdfPair cdf;
  EffectCurve dte;
  EffectCurve pte;
};

Curves sample_curves(bool with_inference) {
  auto ds = ExperimentDataset::create({1, 1, 0, 0, 1, 0}, {0, 2, 2, 4, 6, 1}, Matrix(6, 0), {}, 0.5);
  LocationGrid grid(2, 3);
  Curves c;
  c.cdf = empirical_cdf_pair(ds, grid);
  c.dte = dte(c.cdf);
  c.pte = pte(c.cdf, 2);
  if (with_inference) {
    auto fill = [](EffectCurve curve) {
      const std::size_t m = curve.point.size() + (curve.zero_atom ? 1 : 0);
      BootstrapResult r;
      r.statistics = m;
      r.point.assign(m, 0.0);
      for (std::size_t k = 0; k < m; ++k) {
        r.se.push_back(0.01 * static_cast<double>(k + 1));
        r.ci_lo.push_back(-1.0);
        r.ci_hi.push_back(1.0);
      }
      return attach_inference(curve, r);
    };
    c.dte = fill(c.dte);
    c.pte = fill(c.pte);
  }
  return c;
}

}  // namespace

TEST_CASE("effects csv round trip") {
  for (bool inf : {false, true}) {
    auto c = sample_curves(inf);
    const std::string text = effects_csv(c.cdf, c.dte, c.pte);
    CHECK(text.find(kEffectsHeader) != std::string::npos);
    auto t = parse_effects_csv(text);
    CHECK(t.cdf.grid == c.cdf.grid);
    CHECK(t.cdf.f1 == c.cdf.f1);
    CHECK(t.dte.point == c.dte.point);
    CHECK(t.dte.se == c.dte.se);
    CHECK(t.pte.point == c.pte.point);
    CHECK(t.pte.ci_hi == c.pte.ci_hi);
    CHECK(t.pte.span == 2);
    REQUIRE(t.pte.zero_atom);
    CHECK(t.pte.zero_atom->point == c.pte.zero_atom->point);
    CHECK(t.pte.zero_atom->se == c.pte.zero_atom->se);
    CHECK(effects_csv(t.cdf, t.dte, t.pte) == text);
  }
  CHECK_THROWS(parse_effects_csv("location,foo\n0,1\n2,3\n"));
}

TEST_CASE("ate and balance csv") {
  std::vector<AteResult> rows{{1.5, 0.25, EstimatorKind::unadjusted, 10.0}, {1.25, 0.2, EstimatorKind::adjusted, 10.0}};
  CHECK(ate_csv(rows) == "kind,point,se,control_mean\nunadjusted,1.5,0.25,10\nadjusted,1.25,0.2,10\n");
  std::vector<BalanceRow> b{{"age", 0.5, 0.25, 2.0, false}, {"const", 0.0, 0.0, 0.0, true}};
  CHECK(balance_csv(b) == "variable,mean_diff,se,t\nage,0.5,0.25,2\nconst,0,0,NA\n");
}

TEST_CASE("plots are deterministic and well formed") {
  auto c = sample_curves(true);
  const auto a = dte_svg(c.dte);
  CHECK(a == dte_svg(c.dte));
  CHECK(a.starts_with("<svg"));
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("<polyline") != std::string::npos);
  const auto p = pte_svg(c.pte);
  CHECK(p == pte_svg(c.pte));
  CHECK(p.find("<rect") != std::string::npos);
  // Plots without inference still render.
  auto bare = sample_curves(false);
  CHECK(dte_svg(bare.dte).find("</svg>") != std::string::npos);
  CHECK(pte_svg(bare.pte).find("</svg>") != std::string::npos);
}
