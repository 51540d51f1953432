#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "dtelab/csv.hpp"
#include "dtelab/report.hpp"

namespace fs = std::filesystem;
using namespace dtelab;

namespace {

struct Result {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class Workspace {
 public:
  Workspace() {
    static int counter = 0;
    dir_ = fs::temp_directory_path() / ("dte_lab_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  Result run(const std::string& args, const std::string& env = "") const {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = env + " \"" + std::string(DTE_LAB_BINARY) + "\" " + args + " >\"" + out.string() +
                            "\" 2>\"" + err.string() + "\"";
    const int raw = std::system(cmd.c_str());
    Result r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  fs::path dir_;
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Small, fast estimation settings shared by most runs.
const char* kFastConfig =
    "seed = 11\n"
    "grid.intervals = 4\n"
    "nuisance.learner = logistic\n"
    "inference.replications = 40\n";

}  // namespace

TEST_CASE("simulate validates n and is reproducible") {
  Workspace ws;
  CHECK(ws.run("simulate --n 0 --out " + q(ws.path("a.csv"))).status != 0);
  REQUIRE(ws.run("simulate --n 500 --seed 3 --out " + q(ws.path("a.csv"))).status == 0);
  REQUIRE(ws.run("simulate --n 500 --seed 3 --out " + q(ws.path("b.csv"))).status == 0);
  CHECK(slurp(ws.path("a.csv")) == slurp(ws.path("b.csv")));
  REQUIRE(ws.run("simulate --n 500 --seed 4 --out " + q(ws.path("c.csv"))).status == 0);
  CHECK(slurp(ws.path("a.csv")) != slurp(ws.path("c.csv")));
  CHECK(slurp(ws.path("a.csv")).starts_with("d,y,tier,gender,noise1,noise2\n"));
}

TEST_CASE("estimate writes the full artifact set") {
  Workspace ws;
  spit(ws.path("run.cfg"), kFastConfig);
  REQUIRE(ws.run("simulate --n 3000 --seed 1 --out " + q(ws.path("data.csv"))).status == 0);
  auto r = ws.run("estimate --input " + q(ws.path("data.csv")) + " --config " + q(ws.path("run.cfg")) + " --out " +
                  q(ws.path("out")));
  INFO(r.err);
  REQUIRE(r.status == 0);
  for (auto f : {"effects.csv", "ate.csv", "run_metadata.txt", "dte.svg", "pte.svg"}) CHECK(fs::exists(ws.path("out") / f));

  const auto t = parse_effects_csv(slurp(ws.path("out/effects.csv")));
  CHECK(t.dte.point.size() == 5);
  REQUIRE(t.dte.se.size() == 5);
  for (std::size_t j = 0; j < 5; ++j) CHECK((t.dte.ci_lo[j] <= t.dte.point[j] && t.dte.point[j] <= t.dte.ci_hi[j]));
  for (std::size_t j = 0; j < t.pte.point.size(); ++j)
    CHECK((t.pte.ci_lo[j] <= t.pte.point[j] && t.pte.point[j] <= t.pte.ci_hi[j]));

  const auto ate = parse_csv(slurp(ws.path("out/ate.csv")));
  REQUIRE(ate.rows.size() == 2);
  CHECK(ate.rows[0][0] == "unadjusted");
  CHECK(ate.rows[1][0] == "adjusted");
  CHECK(ate.rows[0][3] == ate.rows[1][3]);

  const auto meta = slurp(ws.path("out/run_metadata.txt"));
  CHECK(meta.find("seed: 11\n") != std::string::npos);
  CHECK(meta.find("nuisance_seed: ") != std::string::npos);
  CHECK(meta.find("bootstrap_seed: ") != std::string::npos);
  CHECK(meta.find("clamped_f1: ") != std::string::npos);
  CHECK(meta.find("nuisance_mode: refit") != std::string::npos);

  SECTION("unadjusted run has one ATE row and the same unadjusted point") {
    auto u = ws.run("estimate --estimator unadjusted --input " + q(ws.path("data.csv")) + " --config " +
                    q(ws.path("run.cfg")) + " --out " + q(ws.path("un")));
    REQUIRE(u.status == 0);
    const auto un = parse_csv(slurp(ws.path("un/ate.csv")));
    REQUIRE(un.rows.size() == 1);
    CHECK(un.rows[0][1] == ate.rows[0][1]);
  }
  SECTION("plot reproduces the svg files") {
    REQUIRE(ws.run("plot --input " + q(ws.path("out/effects.csv")) + " --out " + q(ws.path("replot"))).status == 0);
    CHECK(slurp(ws.path("replot/dte.svg")) == slurp(ws.path("out/dte.svg")));
    CHECK(slurp(ws.path("replot/pte.svg")) == slurp(ws.path("out/pte.svg")));
  }
}

TEST_CASE("null-effect data gives intervals covering zero") {
  Workspace ws;
  spit(ws.path("null.cfg"), std::string(kFastConfig) +
                                "dgp.zero_treat = 0\n"
                                "dgp.cont_treat = 0\n"
                                "inference.replications = 100\n"
                                "inference.nuisance_mode = frozen\n");
  REQUIRE(ws.run("simulate --n 6000 --config " + q(ws.path("null.cfg")) + " --out " + q(ws.path("d.csv"))).status == 0);
  auto r = ws.run("estimate --input " + q(ws.path("d.csv")) + " --config " + q(ws.path("null.cfg")) + " --out " +
                  q(ws.path("o")));
  REQUIRE(r.status == 0);
  const auto t = parse_effects_csv(slurp(ws.path("o/effects.csv")));
  std::size_t covered = 0;
  for (std::size_t j = 0; j < t.dte.point.size(); ++j) covered += t.dte.ci_lo[j] <= 0.0 && 0.0 <= t.dte.ci_hi[j];
  CHECK(static_cast<double>(covered) >= 0.9 * static_cast<double>(t.dte.point.size()));
}

TEST_CASE("input errors name the problem and exit nonzero") {
  Workspace ws;
  spit(ws.path("nocol.csv"), "d,minutes\n1,2\n0,3\n");
  auto r = ws.run("estimate --input " + q(ws.path("nocol.csv")) + " --replications 0");
  CHECK(r.status != 0);
  CHECK(r.err.find("'y'") != std::string::npos);

  spit(ws.path("bad.csv"), "d,y\n1,2\n0,3\n2,1\n");
  r = ws.run("estimate --input " + q(ws.path("bad.csv")) + " --replications 0");
  CHECK(r.status != 0);
  CHECK(r.err.find("bad.csv:4:") != std::string::npos);

  spit(ws.path("bad.cfg"), "grid.intervals = 4\nthis line is broken\n");
  r = ws.run("estimate --input " + q(ws.path("bad.csv")) + " --config " + q(ws.path("bad.cfg")));
  CHECK(r.status != 0);
  CHECK(r.err.find("bad.cfg:2:") != std::string::npos);

  r = ws.run("estimate --input " + q(ws.path("missing.csv")));
  CHECK(r.status != 0);
}

TEST_CASE("balance command") {
  Workspace ws;
  REQUIRE(ws.run("simulate --n 4000 --seed 2 --set dgp.noise_columns=10 --out " + q(ws.path("d.csv"))).status == 0);
  auto r = ws.run("balance --input " + q(ws.path("d.csv")) + " --out " + q(ws.path("b")));
  REQUIRE(r.status == 0);
  const auto t = parse_csv(slurp(ws.path("b/balance.csv")));
  CHECK(t.header == std::vector<std::string>{"variable", "mean_diff", "se", "t"});
  REQUIRE(t.rows.size() == 12);
  std::size_t small = 0;
  for (const auto& row : t.rows) small += std::abs(std::stod(row[3])) < 1.96;
  CHECK(small >= 9);

  // Treated rows have the covariate shifted up by 5.
  std::string text = "d,y,x\n";
  for (int i = 0; i < 200; ++i) text += std::to_string(i % 2) + "," + std::to_string(i % 7) + "," + std::to_string(i % 2 * 5 + i % 3) + "\n";
  spit(ws.path("adv.csv"), text);
  r = ws.run("balance --input " + q(ws.path("adv.csv")) + " --out " + q(ws.path("adv")));
  REQUIRE(r.status == 0);
  CHECK(r.out.find("IMBALANCED: x") != std::string::npos);

  spit(ws.path("nox.csv"), "d,y\n1,2\n0,3\n");
  REQUIRE(ws.run("balance --input " + q(ws.path("nox.csv")) + " --out " + q(ws.path("nox"))).status == 0);
  CHECK(slurp(ws.path("nox/balance.csv")) == "variable,mean_diff,se,t\n");
}

TEST_CASE("subgroup command") {
  Workspace ws;
  spit(ws.path("run.cfg"), std::string(kFastConfig) + "inference.replications = 0\n");

  SECTION("complementary groups partition the sample") {
    REQUIRE(ws.run("simulate --n 4000 --seed 5 --out " + q(ws.path("d.csv"))).status == 0);
    auto r = ws.run("subgroup --group-by gender --input " + q(ws.path("d.csv")) + " --config " + q(ws.path("run.cfg")) +
                    " --out " + q(ws.path("g")));
    INFO(r.err);
    REQUIRE(r.status == 0);
    for (auto g : {"gender=0", "gender=1"})
      for (auto f : {"effects.csv", "ate.csv", "run_metadata.txt", "dte.svg", "pte.svg"})
        CHECK(fs::exists(ws.path("g") / g / f));
    const auto s = parse_csv(slurp(ws.path("g/subgroups.csv")));
    REQUIRE(s.rows.size() == 2);
    CHECK(std::stoul(s.rows[0][1]) + std::stoul(s.rows[1][1]) == 4000);
  }

  SECTION("a failing group does not stop the others") {
    std::string text = "d,y,site\n";
    for (int i = 0; i < 120; ++i) {
      const int site = i % 3;
      const int d = site == 2 ? 0 : i % 2;
      text += std::to_string(d) + "," + std::to_string(i % 5) + "," + std::to_string(site) + "\n";
    }
    spit(ws.path("sites.csv"), text);
    auto r = ws.run("subgroup --group-by site --estimator unadjusted --input " + q(ws.path("sites.csv")) +
                    " --config " + q(ws.path("run.cfg")) + " --out " + q(ws.path("s")));
    CHECK(r.status != 0);
    CHECK(r.err.find("empty treated arm") != std::string::npos);
    CHECK(fs::exists(ws.path("s/site=0/effects.csv")));
    CHECK(fs::exists(ws.path("s/site=1/effects.csv")));
    CHECK(!fs::exists(ws.path("s/site=2/effects.csv")));
  }

  SECTION("opposite group effects show opposite DTE signs") {
    spit(ws.path("inter.cfg"), std::string(kFastConfig) +
                                   "inference.replications = 0\n"
                                   "dgp.zero_treat = -1.5\n"
                                   "dgp.zero_treat_group = 3\n"
                                   "subgroup.women = gender == 1\n"
                                   "subgroup.men = gender != 1\n");
    REQUIRE(ws.run("simulate --n 20000 --seed 8 --config " + q(ws.path("inter.cfg")) + " --out " + q(ws.path("d.csv"))).status == 0);
    auto r = ws.run("subgroup --estimator unadjusted --input " + q(ws.path("d.csv")) + " --config " +
                    q(ws.path("inter.cfg")) + " --out " + q(ws.path("i")));
    INFO(r.err);
    REQUIRE(r.status == 0);
    const auto men = parse_effects_csv(slurp(ws.path("i/men/effects.csv")));
    const auto women = parse_effects_csv(slurp(ws.path("i/women/effects.csv")));
    CHECK(men.dte.point[0] < 0.0);
    CHECK(women.dte.point[0] > 0.0);
  }
}

TEST_CASE("artifacts do not depend on the thread count") {
  Workspace ws;
  spit(ws.path("run.cfg"), std::string(kFastConfig) + "nuisance.learner = boosted_stumps\nnuisance.rounds = 20\n");
  REQUIRE(ws.run("simulate --n 2500 --seed 9 --out " + q(ws.path("d.csv"))).status == 0);
  const std::string args = "estimate --input " + q(ws.path("d.csv")) + " --config " + q(ws.path("run.cfg")) + " --out ";
  REQUIRE(ws.run(args + q(ws.path("one")), "DTE_LAB_THREADS=1").status == 0);
  REQUIRE(ws.run(args + q(ws.path("three")), "DTE_LAB_THREADS=3").status == 0);
  for (auto f : {"effects.csv", "ate.csv", "run_metadata.txt", "dte.svg", "pte.svg"})
    CHECK(slurp(ws.path("one") / f) == slurp(ws.path("three") / f));
}
