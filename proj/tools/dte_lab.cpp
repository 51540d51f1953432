// dte_lab: command-line front end for distributional treatment effect analysis.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dtelab/dtelab.hpp"

namespace fs = std::filesystem;
using namespace dtelab;

namespace {

constexpr std::uint64_t kDefaultSeed = 20240101;

// Values given on the command line; each overrides the matching config key.
struct Flags {
  std::string input;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> estimator;
  std::optional<std::size_t> folds;
  std::optional<std::size_t> replications;
  std::optional<double> level;
  std::string group_by;
  std::size_t n = 0;
  std::vector<std::string> sets;
};

KeyValueConfig load_config(const Flags& f) {
  KeyValueConfig cfg;
  if (!f.config.empty()) cfg = KeyValueConfig::load(f.config);
  for (const auto& kv : f.sets) {
    auto extra = KeyValueConfig::parse(kv, "--set");
    cfg.merge(extra);
  }
  if (f.seed) cfg.set("seed", std::to_string(*f.seed));
  if (f.estimator) cfg.set("estimator.kind", *f.estimator);
  if (f.folds) cfg.set("nuisance.folds", std::to_string(*f.folds));
  if (f.replications) cfg.set("inference.replications", std::to_string(*f.replications));
  if (f.level) cfg.set("inference.level", format_number(*f.level));
  return cfg;
}

void warn_unused(const KeyValueConfig& cfg) {
  for (const auto& k : cfg.unused_keys()) std::cerr << "dte_lab: warning: unused config key '" << k << "'\n";
}

std::size_t to_size(std::int64_t v, const char* key) {
  if (v < 0) throw Error(std::string("config key '") + key + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

ExperimentDataset load_dataset(const std::string& path, const KeyValueConfig& cfg) {
  if (path.empty()) throw Error("--input is required");
  return validate_dataset(read_csv(path), cfg.get_double("data.rho", 0.1));
}

LocationGrid grid_from_config(const ExperimentDataset& ds, const KeyValueConfig& cfg) {
  const std::size_t intervals = to_size(cfg.get_int("grid.intervals", 20), "grid.intervals");
  const std::int64_t step = cfg.get_int("grid.step", 0);
  const std::string base = cfg.get("grid.base", "pooled");
  const double pct = cfg.get_double("grid.percentile", 0.99);
  if (base != "pooled" && base != "control") throw Error("grid.base must be pooled or control, got '" + base + "'");
  if (step > 0) return LocationGrid(step, intervals);
  if (step < 0) throw Error("grid.step must be positive");
  return build_grid(ds, pct, intervals, base == "control" ? GridBase::control : GridBase::pooled);
}

struct RunSettings {
  std::uint64_t seed = kDefaultSeed;
  EstimationConfig estimation;
  std::optional<BootstrapConfig> bootstrap;
  std::string unit_label;
};

RunSettings settings_from_config(const KeyValueConfig& cfg) {
  RunSettings s;
  s.seed = cfg.get_seed("seed", kDefaultSeed);
  const std::string kind = cfg.get("estimator.kind", "adjusted");
  if (kind == "adjusted") s.estimation.kind = EstimatorKind::adjusted;
  else if (kind == "unadjusted") s.estimation.kind = EstimatorKind::unadjusted;
  else throw Error("unknown estimator '" + kind + "' (expected adjusted or unadjusted)");
  s.estimation.pte_span = cfg.get_int("estimator.pte_span", 0);
  s.estimation.rearrange = cfg.get_bool("estimator.rearrange", false);

  auto& nz = s.estimation.nuisance;
  nz.learner = parse_learner_kind(cfg.get("nuisance.learner", "boosted_stumps"));
  nz.folds = to_size(cfg.get_int("nuisance.folds", 3), "nuisance.folds");
  nz.seed = derive_seed(s.seed, {1});
  nz.boosting.rounds = to_size(cfg.get_int("nuisance.rounds", 100), "nuisance.rounds");
  nz.boosting.learning_rate = cfg.get_double("nuisance.learning_rate", 0.1);
  nz.boosting.max_depth = to_size(cfg.get_int("nuisance.max_depth", 2), "nuisance.max_depth");
  nz.boosting.min_leaf = to_size(cfg.get_int("nuisance.min_leaf", 20), "nuisance.min_leaf");
  nz.boosting.subsample = cfg.get_double("nuisance.subsample", 1.0);
  nz.logistic.l2 = cfg.get_double("nuisance.l2", 1e-3);
  nz.logistic.max_iter = to_size(cfg.get_int("nuisance.max_iter", 50), "nuisance.max_iter");

  const std::size_t reps = to_size(cfg.get_int("inference.replications", 500), "inference.replications");
  BootstrapConfig b;
  b.replications = reps;
  b.level = cfg.get_double("inference.level", 0.95);
  b.method = parse_ci_method(cfg.get("inference.method", "normal"));
  b.nuisance_mode = parse_nuisance_mode(cfg.get("inference.nuisance_mode", "refit"));
  b.stratified = cfg.get_bool("inference.stratified", false);
  b.seed = derive_seed(s.seed, {2});
  if (reps > 0) {
    b.validate();
    s.bootstrap = b;
  }
  s.unit_label = cfg.get("plot.unit", "minutes");
  return s;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory '" + dir + "'");
}

std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

// Runs the estimation pipeline on one dataset and writes its artifact set.
void write_estimate(const ExperimentDataset& ds, const KeyValueConfig& cfg, const RunSettings& s,
                    const std::string& out_dir, const std::string& input_label) {
  const unsigned threads = default_threads();
  const LocationGrid grid = grid_from_config(ds, cfg);
  const Analysis a = analyze(ds, grid, s.estimation, s.bootstrap, threads);
  const PointEstimates& e = a.estimates;

  ensure_dir(out_dir);
  write_text_file(join_path(out_dir, "effects.csv"), effects_csv(e.cdf, e.dte, e.pte));
  std::vector<AteResult> ates{e.ate_unadjusted};
  if (e.ate_adjusted) ates.push_back(*e.ate_adjusted);
  write_text_file(join_path(out_dir, "ate.csv"), ate_csv(ates));
  write_text_file(join_path(out_dir, "dte.svg"), dte_svg(e.dte, s.unit_label));
  write_text_file(join_path(out_dir, "pte.svg"), pte_svg(e.pte, s.unit_label));

  std::size_t above = 0;
  for (double y : ds.outcome()) above += y > grid.max_location();
  const auto& nz = s.estimation.nuisance;
  std::string m;
  auto line = [&](const std::string& k, const std::string& v) { m += k + ": " + v + "\n"; };
  line("input", input_label);
  line("units", std::to_string(ds.size()));
  line("treated", std::to_string(ds.n_treated()));
  line("control", std::to_string(ds.n_control()));
  line("rho", format_number(ds.rho()));
  line("grid_step", std::to_string(grid.step()));
  line("grid_intervals", std::to_string(grid.intervals()));
  line("outcomes_above_grid", std::to_string(above));
  line("outcomes_on_grid", outcomes_on_grid(ds, grid) ? "true" : "false");
  line("estimator", to_string(s.estimation.kind));
  line("pte_span", std::to_string(s.estimation.span_for(grid)));
  line("rearrange", s.estimation.rearrange ? "true" : "false");
  line("seed", std::to_string(s.seed));
  if (s.estimation.kind == EstimatorKind::adjusted) {
    line("nuisance_learner", to_string(nz.learner));
    line("nuisance_folds", std::to_string(nz.folds));
    line("nuisance_seed", std::to_string(nz.seed));
    line("nonconverged_fits", std::to_string(a.nonconverged_fits));
  }
  line("clamped_f1", std::to_string(e.cdf.clamped_f1));
  line("clamped_f0", std::to_string(e.cdf.clamped_f0));
  if (a.bootstrap) {
    const auto& b = *a.bootstrap;
    const bool frozen = s.bootstrap->nuisance_mode == NuisanceMode::frozen || s.estimation.kind == EstimatorKind::unadjusted;
    line("bootstrap_replications", std::to_string(s.bootstrap->replications));
    line("bootstrap_seed", std::to_string(s.bootstrap->seed));
    line("bootstrap_level", format_number(b.level));
    line("bootstrap_method", to_string(b.method));
    line("bootstrap_stratified", s.bootstrap->stratified ? "true" : "false");
    line("nuisance_mode", frozen ? "frozen" : "refit");
    line("bootstrap_failures", std::to_string(b.failures));
    line("bootstrap_redraws", std::to_string(b.redraws));
  } else {
    line("bootstrap_replications", "0");
  }
  write_text_file(join_path(out_dir, "run_metadata.txt"), m);

  if (above > 0)
    std::cerr << "dte_lab: warning: " << above << " outcomes lie above the last grid location "
              << format_number(grid.max_location()) << "\n";
  if (e.cdf.clamped_f1 + e.cdf.clamped_f0 > 0)
    std::cerr << "dte_lab: warning: " << (e.cdf.clamped_f1 + e.cdf.clamped_f0)
              << " adjusted CDF values were clamped to [0,1]\n";
}

int cmd_estimate(const Flags& f) {
  const auto cfg = load_config(f);
  const auto s = settings_from_config(cfg);
  const auto ds = load_dataset(f.input, cfg);
  write_estimate(ds, cfg, s, f.out.empty() ? "." : f.out, f.input);
  warn_unused(cfg);
  return 0;
}

int cmd_balance(const Flags& f) {
  const auto cfg = load_config(f);
  const auto ds = load_dataset(f.input, cfg);
  const double threshold = cfg.get_double("balance.threshold", 1.96);
  const auto rows = balance_table(ds);
  const std::string out = f.out.empty() ? "." : f.out;
  ensure_dir(out);
  write_text_file(join_path(out, "balance.csv"), balance_csv(rows));
  std::vector<std::string> flagged;
  for (const auto& r : rows)
    if (!r.degenerate && std::abs(r.t) > threshold) flagged.push_back(r.variable);
  std::string summary = "balance: " + std::to_string(flagged.size()) + " of " + std::to_string(rows.size()) +
                        " covariates with |t| > " + format_number(threshold);
  if (!flagged.empty()) {
    summary += " (IMBALANCED:";
    for (const auto& v : flagged) summary += " " + v;
    summary += ")";
  }
  std::cout << summary << "\n";
  warn_unused(cfg);
  return 0;
}

int cmd_simulate(const Flags& f) {
  const auto cfg = load_config(f);
  if (f.n == 0) throw Error("simulate: --n must be at least 1");
  const DgpSpec spec = dgp_from_config(cfg);
  const std::uint64_t seed = cfg.get_seed("seed", kDefaultSeed);
  const auto ds = generate(spec, f.n, seed, default_threads());
  const std::string out = f.out.empty() ? "data.csv" : f.out;
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) ensure_dir(parent.string());
  write_text_file(out, dataset_to_csv(ds));
  warn_unused(cfg);
  return 0;
}

// "<column> <op> <number>", op one of == != < <= > >=.
std::function<bool(std::span<const double>)> parse_predicate(const std::string& text, const ExperimentDataset& ds,
                                                             const std::string& name) {
  static const std::vector<std::string> ops{"==", "!=", "<=", ">=", "<", ">"};
  for (const auto& op : ops) {
    const auto pos = text.find(op);
    if (pos == std::string::npos) continue;
    auto trim = [](std::string s) {
      while (!s.empty() && s.front() == ' ') s.erase(s.begin());
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s;
    };
    const std::string col = trim(text.substr(0, pos));
    const std::string rhs = trim(text.substr(pos + op.size()));
    const auto idx = ds.covariate_index(col);
    if (!idx) throw Error("subgroup '" + name + "': unknown column '" + col + "'");
    const auto v = detail::parse_double(rhs);
    if (!v) throw Error("subgroup '" + name + "': expected a number after '" + op + "', got '" + rhs + "'");
    const std::size_t k = *idx;
    const double c = *v;
    if (op == "==") return [k, c](std::span<const double> r) { return r[k] == c; };
    if (op == "!=") return [k, c](std::span<const double> r) { return r[k] != c; };
    if (op == "<=") return [k, c](std::span<const double> r) { return r[k] <= c; };
    if (op == ">=") return [k, c](std::span<const double> r) { return r[k] >= c; };
    if (op == "<") return [k, c](std::span<const double> r) { return r[k] < c; };
    return [k, c](std::span<const double> r) { return r[k] > c; };
  }
  throw Error("subgroup '" + name + "': cannot parse predicate '" + text + "'");
}

int cmd_subgroup(const Flags& f) {
  const auto cfg = load_config(f);
  const auto s = settings_from_config(cfg);
  const auto ds = load_dataset(f.input, cfg);

  std::vector<std::pair<std::string, std::function<bool(std::span<const double>)>>> groups;
  if (!f.group_by.empty()) {
    const auto idx = ds.covariate_index(f.group_by);
    if (!idx) throw Error("--group-by: unknown column '" + f.group_by + "' in " + f.input);
    std::set<double> levels;
    for (std::size_t i = 0; i < ds.size(); ++i) levels.insert(ds.covariates()(i, *idx));
    for (double v : levels)
      groups.emplace_back(f.group_by + "=" + format_number(v),
                          [k = *idx, v](std::span<const double> r) { return r[k] == v; });
  }
  for (const auto& [key, value] : cfg.entries()) {
    if (!key.starts_with("subgroup.")) continue;
    const std::string name = key.substr(9);
    groups.emplace_back(name, parse_predicate(cfg.get(key, ""), ds, name));
  }
  if (groups.empty()) throw Error("subgroup: give --group-by or at least one subgroup.<name> config key");

  const std::string out = f.out.empty() ? "." : f.out;
  ensure_dir(out);
  std::string summary = "group,units,treated,control,status\n";
  int failed = 0;
  for (const auto& [name, pred] : groups) {
    std::size_t units = 0;
    std::size_t treated = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (pred(ds.covariates().row(i))) ++units, treated += ds.treatment()[i];
    std::string status = "ok";
    try {
      const auto sub = subset_by_group(ds, pred);
      write_estimate(sub, cfg, s, join_path(out, name), f.input + " [" + name + "]");
    } catch (const Error& e) {
      status = "error";
      ++failed;
      std::cerr << "dte_lab: error: subgroup '" << name << "': " << e.what() << "\n";
    }
    summary += name + "," + std::to_string(units) + "," + std::to_string(treated) + "," +
               std::to_string(units - treated) + "," + status + "\n";
  }
  write_text_file(join_path(out, "subgroups.csv"), summary);
  warn_unused(cfg);
  return failed == 0 ? 0 : 1;
}

int cmd_plot(const Flags& f) {
  const auto cfg = load_config(f);
  if (f.input.empty()) throw Error("--input is required (an effects.csv file)");
  std::ifstream in(f.input, std::ios::binary);
  if (!in) throw Error("cannot open input file '" + f.input + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto t = parse_effects_csv(ss.str(), f.input);
  const std::string unit = cfg.get("plot.unit", "minutes");
  const std::string out = f.out.empty() ? "." : f.out;
  ensure_dir(out);
  write_text_file(join_path(out, "dte.svg"), dte_svg(t.dte, unit));
  write_text_file(join_path(out, "pte.svg"), pte_svg(t.pte, unit));
  warn_unused(cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributional and probability treatment effects for randomized experiments"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "Key-value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Master seed (overrides 'seed')");
    sub->add_option("--set", f.sets, "Extra 'key=value' config entry; repeatable");
  };
  auto add_estimation = [&](CLI::App* sub) {
    sub->add_option("--estimator", f.estimator, "adjusted or unadjusted");
    sub->add_option("--folds", f.folds, "Cross-fitting folds");
    sub->add_option("--replications", f.replications, "Bootstrap replications (0 disables)");
    sub->add_option("--level", f.level, "Confidence level");
  };

  auto* est = app.add_subcommand("estimate", "Estimate DTE, PTE and ATE with bootstrap intervals");
  est->add_option("--input", f.input, "Input CSV with columns d, y and covariates")->required();
  est->add_option("--out", f.out, "Output directory");
  add_common(est);
  add_estimation(est);

  auto* bal = app.add_subcommand("balance", "Covariate balance table");
  bal->add_option("--input", f.input, "Input CSV")->required();
  bal->add_option("--out", f.out, "Output directory");
  add_common(bal);

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic experiment");
  sim->add_option("--n", f.n, "Number of units")->required();
  sim->add_option("--out", f.out, "Output CSV path (default data.csv)");
  add_common(sim);

  auto* grp = app.add_subcommand("subgroup", "Run the estimate pipeline per subgroup");
  grp->add_option("--input", f.input, "Input CSV")->required();
  grp->add_option("--out", f.out, "Output directory (one subdirectory per group)");
  grp->add_option("--group-by", f.group_by, "Covariate whose distinct values define the groups");
  add_common(grp);
  add_estimation(grp);

  auto* plt = app.add_subcommand("plot", "Redraw plots from an effects.csv");
  plt->add_option("--input", f.input, "effects.csv written by estimate")->required();
  plt->add_option("--out", f.out, "Output directory");
  add_common(plt);

  CLI11_PARSE(app, argc, argv);

  try {
    if (est->parsed()) return cmd_estimate(f);
    if (bal->parsed()) return cmd_balance(f);
    if (sim->parsed()) return cmd_simulate(f);
    if (grp->parsed()) return cmd_subgroup(f);
    if (plt->parsed()) return cmd_plot(f);
  } catch (const std::exception& e) {
    std::cerr << "dte_lab: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
