#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dtelab/core_model.hpp"
#include "dtelab/parallel.hpp"

namespace dtelab {

inline constexpr double kClipEps = 1e-6;

inline double clip_probability(double p, double eps = kClipEps) { return std::clamp(p, eps, 1.0 - eps); }

inline double logistic(double s) {
  if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + exp(s)), stable for large |s|.
inline double softplus(double s) { return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

// Negative log-likelihood of one label under score s.
inline double logistic_loss(double label, double s) { return label > 0.5 ? softplus(-s) : softplus(s); }

template <class Model>
std::vector<double> predict_all(const Model& model, const Matrix& x) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = model.predict(x.row(i));
  return out;
}

namespace detail {

inline double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline bool is_constant(std::span<const double> v) {
  return std::ranges::all_of(v, [&](double a) { return a == v.front(); });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Constant predictors
// ---------------------------------------------------------------------------

struct ConstantModel {
  double value = 0.0;
  double predict(std::span<const double>) const noexcept { return value; }
};

struct ConstantLearner {
  double clip_eps = kClipEps;
  ConstantModel fit(const Matrix&, std::span<const double> labels, std::uint64_t = 0) const {
    if (labels.empty()) throw Error("cannot fit a learner on zero samples");
    return {clip_probability(detail::mean_of(labels), clip_eps)};
  }
};

struct ConstantMeanLearner {
  ConstantModel fit(const Matrix&, std::span<const double> targets, std::uint64_t = 0) const {
    if (targets.empty()) throw Error("cannot fit a learner on zero samples");
    return {detail::mean_of(targets)};
  }
};

// ---------------------------------------------------------------------------
// L2-penalised logistic regression by iteratively reweighted least squares
// ---------------------------------------------------------------------------

struct LogisticConfig {
  std::size_t max_iter = 50;
  double tol = 1e-8;
  double l2 = 1e-3;  // penalty on slopes only
  double clip_eps = kClipEps;
};

struct LogisticModel {
  double intercept = 0.0;
  std::vector<double> coef;
  bool converged = true;
  std::size_t iterations = 0;
  // Penalised negative log-likelihood after each accepted step (index 0 = start).
  std::vector<double> objective;
  double clip_eps = kClipEps;

  double score(std::span<const double> x) const {
    double s = intercept;
    for (std::size_t k = 0; k < coef.size(); ++k) s += coef[k] * x[k];
    return s;
  }
  double predict(std::span<const double> x) const { return clip_probability(logistic(score(x)), clip_eps); }
};

inline LogisticModel fit_logistic(const Matrix& x, std::span<const double> labels, const LogisticConfig& cfg = {}) {
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  if (n == 0) throw Error("logistic regression needs at least one sample");
  if (labels.size() != n) throw Error("label count differs from sample count");
  for (double v : labels)
    if (v != 0.0 && v != 1.0) throw Error("logistic regression labels must be binary");

  LogisticModel model;
  model.clip_eps = cfg.clip_eps;
  model.coef.assign(p, 0.0);
  const double base = detail::mean_of(labels);
  if (detail::is_constant(labels)) {
    // Intercept-only limit; the clip keeps it finite.
    model.intercept = logit(clip_probability(base, cfg.clip_eps));
    return model;
  }
  model.intercept = logit(base);

  const std::size_t m = p + 1;
  Eigen::MatrixXd design(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    design(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t k = 0; k < p; ++k) design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + 1)) = x(i, k);
  }
  Eigen::Map<const Eigen::VectorXd> yv(labels.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  beta(0) = model.intercept;

  auto objective = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd s = design * b;
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) f += logistic_loss(labels[i], s(static_cast<Eigen::Index>(i)));
    return f + 0.5 * cfg.l2 * b.tail(static_cast<Eigen::Index>(p)).squaredNorm();
  };

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), cfg.l2);
  penalty(0) = 0.0;
  double current = objective(beta);
  model.objective.push_back(current);
  model.converged = false;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    Eigen::VectorXd s = design * beta;
    Eigen::VectorXd prob(static_cast<Eigen::Index>(n));
    Eigen::VectorXd w(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      prob(i) = logistic(s(i));
      w(i) = std::max(prob(i) * (1.0 - prob(i)), 1e-12);
    }
    Eigen::VectorXd grad = design.transpose() * (prob - yv) + penalty.cwiseProduct(beta);
    Eigen::MatrixXd hess = design.transpose() * w.asDiagonal() * design;
    hess.diagonal() += penalty + Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 1e-10);
    Eigen::VectorXd step = -hess.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd candidate = beta + step;
    double next = objective(candidate);
    for (int halving = 0; halving < 40 && !(next <= current); ++halving) {
      t *= 0.5;
      candidate = beta + t * step;
      next = objective(candidate);
    }
    model.iterations = it + 1;
    if (!(next <= current)) {
      // No descent possible along the Newton direction: at the optimum to
      // working precision.
      model.converged = true;
      break;
    }
    const double change = (t * step).cwiseAbs().maxCoeff();
    beta = candidate;
    current = next;
    model.objective.push_back(current);
    if (change < cfg.tol) {
      model.converged = true;
      break;
    }
  }
  model.intercept = beta(0);
  for (std::size_t k = 0; k < p; ++k) model.coef[k] = beta(static_cast<Eigen::Index>(k + 1));
  return model;
}

struct LogisticLearner {
  LogisticConfig config;
  LogisticModel fit(const Matrix& x, std::span<const double> labels, std::uint64_t = 0) const {
    return fit_logistic(x, labels, config);
  }
};

// Ridge least squares for conditional means (intercept unpenalised).
struct LinearModel {
  double intercept = 0.0;
  std::vector<double> coef;
  double predict(std::span<const double> x) const {
    double s = intercept;
    for (std::size_t k = 0; k < coef.size(); ++k) s += coef[k] * x[k];
    return s;
  }
};

struct LinearMeanLearner {
  double l2 = 1e-3;
  LinearModel fit(const Matrix& x, std::span<const double> targets, std::uint64_t = 0) const {
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();
    if (n == 0) throw Error("cannot fit a learner on zero samples");
    const auto m = static_cast<Eigen::Index>(p + 1);
    Eigen::MatrixXd design(static_cast<Eigen::Index>(n), m);
    for (std::size_t i = 0; i < n; ++i) {
      design(static_cast<Eigen::Index>(i), 0) = 1.0;
      for (std::size_t k = 0; k < p; ++k) design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + 1)) = x(i, k);
    }
    Eigen::Map<const Eigen::VectorXd> yv(targets.data(), static_cast<Eigen::Index>(n));
    Eigen::MatrixXd gram = design.transpose() * design;
    for (Eigen::Index k = 1; k < m; ++k) gram(k, k) += l2;
    gram.diagonal().array() += 1e-10;
    Eigen::VectorXd beta = gram.ldlt().solve(design.transpose() * yv);
    LinearModel model;
    model.intercept = beta(0);
    model.coef.resize(p);
    for (std::size_t k = 0; k < p; ++k) model.coef[k] = beta(static_cast<Eigen::Index>(k + 1));
    return model;
  }
};

// ---------------------------------------------------------------------------
// Gradient boosting with depth-limited histogram trees
// ---------------------------------------------------------------------------

struct BoostingConfig {
  std::size_t rounds = 100;
  double learning_rate = 0.1;
  std::size_t max_depth = 2;
  std::size_t min_leaf = 20;
  std::size_t max_bins = 64;
  double l2 = 0.0;          // leaf-value penalty
  double subsample = 1.0;   // row fraction per round; < 1 makes the seed matter
  double clip_eps = kClipEps;
  bool record_loss = false;  // keep the per-round training loss in the model
};

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  int leaf_index(std::span<const double> x) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
      const Node& nd = nodes[static_cast<std::size_t>(k)];
      k = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return k;
  }
  double predict(std::span<const double> x) const { return nodes[static_cast<std::size_t>(leaf_index(x))].value; }
};

enum class BoostingLoss { logistic, squared };

struct BoostedModel {
  BoostingLoss loss = BoostingLoss::logistic;
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
  // Mean training loss before the first tree and after each round, when
  // BoostingConfig::record_loss is set.
  std::vector<double> train_loss;
  double clip_eps = kClipEps;

  double score(std::span<const double> x) const {
    double s = base_score;
    for (const auto& t : trees) s += t.predict(x);
    return s;
  }
  double predict(std::span<const double> x) const {
    const double s = score(x);
    return loss == BoostingLoss::logistic ? clip_probability(logistic(s), clip_eps) : s;
  }
};

namespace detail {

// Per-feature cut points taken from the training sample. A value v falls in
// bin b = #{cuts < v}; splitting after bin b means "x <= cuts[b]".
struct FeatureBins {
  std::vector<std::vector<double>> cuts;
  std::vector<std::uint16_t> codes;  // column-major, n per feature
  std::size_t n = 0;

  FeatureBins(const Matrix& x, std::size_t max_bins) : cuts(x.cols()), codes(x.rows() * x.cols()), n(x.rows()) {
    max_bins = std::clamp<std::size_t>(max_bins, 2, 65535);
    std::vector<double> col(n);
    for (std::size_t f = 0; f < x.cols(); ++f) {
      for (std::size_t i = 0; i < n; ++i) col[i] = x(i, f);
      std::vector<double> sorted = col;
      std::ranges::sort(sorted);
      auto last = std::unique(sorted.begin(), sorted.end());
      sorted.erase(last, sorted.end());
      auto& c = cuts[f];
      if (sorted.size() <= max_bins) {
        for (std::size_t k = 0; k + 1 < sorted.size(); ++k) c.push_back(0.5 * (sorted[k] + sorted[k + 1]));
      } else {
        std::vector<double> all = col;
        std::ranges::sort(all);
        for (std::size_t b = 1; b < max_bins; ++b) {
          const std::size_t pos = b * n / max_bins;
          const double v = 0.5 * (all[pos - 1] + all[pos]);
          if (c.empty() || v > c.back()) c.push_back(v);
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        auto it = std::lower_bound(c.begin(), c.end(), col[i]);
        codes[f * n + i] = static_cast<std::uint16_t>(it - c.begin());
      }
    }
  }
  std::uint16_t code(std::size_t f, std::size_t i) const { return codes[f * n + i]; }
  std::size_t bin_count(std::size_t f) const { return cuts[f].size() + 1; }
};

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  std::size_t bin = 0;
};

inline double leaf_objective(double g, double h, double l2) { return g * g / (std::max(h, 1e-12) + l2); }

inline SplitChoice best_split(const FeatureBins& bins, std::span<const std::size_t> rows, std::span<const double> grad,
                              std::span<const double> hess, const BoostingConfig& cfg) {
  SplitChoice best;
  double g_total = 0.0;
  double h_total = 0.0;
  for (auto i : rows) {
    g_total += grad[i];
    h_total += hess[i];
  }
  const double parent = leaf_objective(g_total, h_total, cfg.l2);
  const std::size_t min_leaf = std::max<std::size_t>(1, cfg.min_leaf);
  std::vector<double> hg;
  std::vector<double> hh;
  std::vector<std::size_t> hc;
  for (std::size_t f = 0; f < bins.cuts.size(); ++f) {
    const std::size_t nb = bins.bin_count(f);
    if (nb < 2) continue;
    hg.assign(nb, 0.0);
    hh.assign(nb, 0.0);
    hc.assign(nb, 0);
    for (auto i : rows) {
      const auto b = bins.code(f, i);
      hg[b] += grad[i];
      hh[b] += hess[i];
      ++hc[b];
    }
    double gl = 0.0;
    double hl = 0.0;
    std::size_t cl = 0;
    for (std::size_t b = 0; b + 1 < nb; ++b) {
      gl += hg[b];
      hl += hh[b];
      cl += hc[b];
      const std::size_t cr = rows.size() - cl;
      if (cl < min_leaf) continue;
      if (cr < min_leaf) break;
      const double gain =
          leaf_objective(gl, hl, cfg.l2) + leaf_objective(g_total - gl, h_total - hl, cfg.l2) - parent;
      if (gain > best.gain + 1e-12 * std::max(1.0, std::abs(parent))) {
        best = {gain, static_cast<int>(f), b};
      }
    }
  }
  return best;
}

template <class LossFn>
BoostedModel fit_boosted(const Matrix& x, std::span<const double> targets, const BoostingConfig& cfg,
                         std::uint64_t seed, BoostingLoss kind, LossFn&& loss) {
  const std::size_t n = x.rows();
  if (n == 0) throw Error("cannot fit a learner on zero samples");
  if (targets.size() != n) throw Error("target count differs from sample count");

  BoostedModel model;
  model.loss = kind;
  model.clip_eps = cfg.clip_eps;
  const double mean = mean_of(targets);
  model.base_score = kind == BoostingLoss::logistic ? logit(clip_probability(mean, cfg.clip_eps)) : mean;

  std::vector<double> score(n, model.base_score);
  auto total_loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += loss(targets[i], score[i]);
    return s / static_cast<double>(n);
  };
  if (cfg.record_loss) model.train_loss.push_back(total_loss());
  if (cfg.rounds == 0 || is_constant(targets)) return model;

  const FeatureBins bins(x, cfg.max_bins);
  std::vector<double> grad(n);
  std::vector<double> hess(n);
  std::vector<std::size_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::vector<int> leaf_of(n);

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      if (kind == BoostingLoss::logistic) {
        const double p = logistic(score[i]);
        grad[i] = p - targets[i];
        hess[i] = p * (1.0 - p);
      } else {
        grad[i] = score[i] - targets[i];
        hess[i] = 1.0;
      }
    }
    std::vector<std::size_t> sample;
    if (cfg.subsample < 1.0) {
      std::bernoulli_distribution keep(cfg.subsample);
      for (std::size_t i = 0; i < n; ++i)
        if (keep(rng)) sample.push_back(i);
      if (sample.empty()) sample = all_rows;
    } else {
      sample = all_rows;
    }

    // Level-wise growth.
    RegressionTree tree;
    tree.nodes.emplace_back();
    std::vector<std::pair<int, std::vector<std::size_t>>> frontier;
    frontier.emplace_back(0, std::move(sample));
    for (std::size_t depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
      std::vector<std::pair<int, std::vector<std::size_t>>> next;
      for (auto& [node, rows] : frontier) {
        if (rows.size() < 2 * std::max<std::size_t>(1, cfg.min_leaf)) continue;
        const SplitChoice split = best_split(bins, rows, grad, hess, cfg);
        if (split.feature < 0) continue;
        const auto f = static_cast<std::size_t>(split.feature);
        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto i : rows) (bins.code(f, i) <= split.bin ? left : right).push_back(i);
        const int li = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& nd = tree.nodes[static_cast<std::size_t>(node)];
        nd.feature = split.feature;
        nd.threshold = bins.cuts[f][split.bin];
        nd.left = li;
        nd.right = li + 1;
        next.emplace_back(li, std::move(left));
        next.emplace_back(li + 1, std::move(right));
      }
      frontier = std::move(next);
    }

    // Newton leaf values on all training rows routed to each leaf, shrunk by
    // the learning rate. A logistic leaf whose hessian mass is below
    // learning_rate * count / 8 could overshoot (the loss curvature is at
    // most 1/4 per row), so its step is halved until the leaf loss does not
    // increase. Squared-loss steps with learning_rate <= 1 always descend.
    const std::size_t node_count = tree.nodes.size();
    std::vector<double> leaf_g(node_count, 0.0);
    std::vector<double> leaf_h(node_count, 0.0);
    std::vector<double> leaf_n(node_count, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(tree.leaf_index(x.row(i)));
      leaf_of[i] = static_cast<int>(k);
      leaf_g[k] += grad[i];
      leaf_h[k] += hess[i];
      leaf_n[k] += 1.0;
    }
    for (std::size_t k = 0; k < node_count; ++k) {
      auto& nd = tree.nodes[k];
      if (nd.feature >= 0 || leaf_n[k] == 0.0) continue;
      double v = -cfg.learning_rate * leaf_g[k] / (std::max(leaf_h[k], 1e-12) + cfg.l2);
      const bool safe = kind == BoostingLoss::squared ? cfg.learning_rate <= 1.0
                                                      : leaf_h[k] >= cfg.learning_rate * leaf_n[k] / 8.0;
      if (!safe) {
        double before = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (leaf_of[i] == static_cast<int>(k)) before += loss(targets[i], score[i]);
        for (int halving = 0; halving < 60; ++halving) {
          double after = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            if (leaf_of[i] == static_cast<int>(k)) after += loss(targets[i], score[i] + v);
          if (after <= before) break;
          v = halving == 59 ? 0.0 : 0.5 * v;
        }
      }
      nd.value = v;
    }
    for (std::size_t i = 0; i < n; ++i) score[i] += tree.nodes[static_cast<std::size_t>(leaf_of[i])].value;
    model.trees.push_back(std::move(tree));
    if (cfg.record_loss) model.train_loss.push_back(total_loss());
  }
  return model;
}

}  // namespace detail

// Gradient boosting on the logistic loss; predictions pass through the
// logistic link and are clipped to [clip_eps, 1 - clip_eps].
inline BoostedModel fit_boosted_stumps(const Matrix& x, std::span<const double> labels, const BoostingConfig& cfg = {},
                                       std::uint64_t seed = 0) {
  for (double v : labels)
    if (v != 0.0 && v != 1.0) throw Error("boosting labels must be binary");
  return detail::fit_boosted(x, labels, cfg, seed, BoostingLoss::logistic,
                             [](double y, double s) { return logistic_loss(y, s); });
}

// Same trees on the squared loss, for conditional means.
inline BoostedModel fit_boosted_regression(const Matrix& x, std::span<const double> targets,
                                           const BoostingConfig& cfg = {}, std::uint64_t seed = 0) {
  return detail::fit_boosted(x, targets, cfg, seed, BoostingLoss::squared,
                             [](double y, double s) { return 0.5 * (s - y) * (s - y); });
}

struct BoostedStumpsLearner {
  BoostingConfig config;
  BoostedModel fit(const Matrix& x, std::span<const double> labels, std::uint64_t seed = 0) const {
    return fit_boosted_stumps(x, labels, config, seed);
  }
};

struct BoostedMeanLearner {
  BoostingConfig config;
  BoostedModel fit(const Matrix& x, std::span<const double> targets, std::uint64_t seed = 0) const {
    return fit_boosted_regression(x, targets, config, seed);
  }
};

// ---------------------------------------------------------------------------
// Runtime learner selection
// ---------------------------------------------------------------------------

enum class LearnerKind { logistic, boosted_stumps, constant };

inline LearnerKind parse_learner_kind(const std::string& s) {
  if (s == "logistic") return LearnerKind::logistic;
  if (s == "boosted_stumps") return LearnerKind::boosted_stumps;
  if (s == "constant") return LearnerKind::constant;
  throw Error("unknown nuisance learner '" + s + "' (expected logistic, boosted_stumps or constant)");
}

inline const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::logistic: return "logistic";
    case LearnerKind::boosted_stumps: return "boosted_stumps";
    case LearnerKind::constant: return "constant";
  }
  return "?";
}

struct NuisanceConfig {
  LearnerKind learner = LearnerKind::boosted_stumps;
  std::size_t folds = 3;
  std::uint64_t seed = 0;
  LogisticConfig logistic;
  BoostingConfig boosting;
};

using AnyCdfLearner = std::variant<LogisticLearner, BoostedStumpsLearner, ConstantLearner>;
using AnyMeanLearner = std::variant<LinearMeanLearner, BoostedMeanLearner, ConstantMeanLearner>;

inline AnyCdfLearner make_cdf_learner(const NuisanceConfig& cfg) {
  switch (cfg.learner) {
    case LearnerKind::logistic: return LogisticLearner{cfg.logistic};
    case LearnerKind::boosted_stumps: return BoostedStumpsLearner{cfg.boosting};
    case LearnerKind::constant: return ConstantLearner{cfg.boosting.clip_eps};
  }
  throw Error("unreachable learner kind");
}

inline AnyMeanLearner make_mean_learner(const NuisanceConfig& cfg) {
  switch (cfg.learner) {
    case LearnerKind::logistic: return LinearMeanLearner{cfg.logistic.l2};
    case LearnerKind::boosted_stumps: return BoostedMeanLearner{cfg.boosting};
    case LearnerKind::constant: return ConstantMeanLearner{};
  }
  throw Error("unreachable learner kind");
}

// ---------------------------------------------------------------------------
// Folds and cross-fitting
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::size_t folds = 3;
  std::vector<std::uint32_t> assignment;  // unit -> fold id
};

// Seeded shuffle within each arm, then round-robin fold ids, so per-arm fold
// sizes differ by at most one.
inline FoldPlan make_fold_plan(std::span<const std::uint8_t> treatment, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw Error("cross-fitting needs at least 2 folds");
  FoldPlan plan{folds, std::vector<std::uint32_t>(treatment.size(), 0)};
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < treatment.size(); ++i)
      if (treatment[i] == arm) idx.push_back(i);
    std::mt19937_64 rng(derive_seed(seed, {0xF01D, static_cast<std::uint64_t>(arm)}));
    // Fisher-Yates with an explicit index draw keeps the permutation
    // independent of the standard library's shuffle implementation.
    for (std::size_t k = idx.size(); k > 1; --k) {
      const std::size_t r = static_cast<std::size_t>(rng() % k);
      std::swap(idx[k - 1], idx[r]);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) plan.assignment[idx[k]] = static_cast<std::uint32_t>(k % folds);
  }
  return plan;
}

inline FoldPlan make_fold_plan(const ExperimentDataset& ds, std::size_t folds, std::uint64_t seed) {
  return make_fold_plan(ds.treatment(), folds, seed);
}

// Out-of-fold nuisance predictions at every unit's covariates.
// cdf[d][j][i] estimates Pr(Y(d) <= y_j | X_i); mean[d][i] estimates E[Y(d) | X_i].
// NaN marks a missing prediction.
struct CrossFitPredictions {
  LocationGrid grid{1, 1};
  std::size_t units = 0;
  std::array<std::vector<std::vector<double>>, 2> cdf;
  std::array<std::vector<double>, 2> mean;
  std::size_t nonconverged_fits = 0;

  bool has_cdf() const noexcept { return !cdf[0].empty(); }
  bool has_mean() const noexcept { return !mean[0].empty(); }

  static CrossFitPredictions empty(const LocationGrid& grid, std::size_t units) {
    CrossFitPredictions p;
    p.grid = grid;
    p.units = units;
    for (auto& arm : p.cdf) arm.assign(grid.size(), std::vector<double>(units, std::numeric_limits<double>::quiet_NaN()));
    for (auto& arm : p.mean) arm.assign(units, std::numeric_limits<double>::quiet_NaN());
    return p;
  }
};

namespace detail {

struct FoldSplit {
  // train[d][k]: units of arm d outside fold k; test[k]: all units in fold k.
  std::array<std::vector<std::vector<std::size_t>>, 2> train;
  std::vector<std::vector<std::size_t>> test;
};

inline FoldSplit split_folds(const ExperimentDataset& ds, const FoldPlan& plan) {
  if (plan.assignment.size() != ds.size()) throw Error("fold plan does not cover the dataset");
  if (plan.folds < 2) throw Error("cross-fitting needs at least 2 folds");
  FoldSplit s;
  s.test.resize(plan.folds);
  for (auto& arm : s.train) arm.resize(plan.folds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t f = plan.assignment[i];
    if (f >= plan.folds) throw Error("fold id out of range at unit " + std::to_string(i));
    s.test[f].push_back(i);
    const int d = ds.treatment()[i];
    for (std::size_t k = 0; k < plan.folds; ++k)
      if (k != f) s.train[static_cast<std::size_t>(d)][k].push_back(i);
  }
  for (int d = 0; d < 2; ++d)
    for (std::size_t k = 0; k < plan.folds; ++k)
      if (s.train[static_cast<std::size_t>(d)][k].empty())
        throw Error("cross-fitting: training split for fold " + std::to_string(k) + " has an empty " +
                    arm_name(d) + " arm");
  return s;
}

template <class Model>
void count_nonconverged(const Model&, std::size_t&) {}
inline void count_nonconverged(const LogisticModel& m, std::size_t& c) {
  if (!m.converged) ++c;
}

}  // namespace detail

// For each arm d, fold k and location y_j: fit on arm-d units outside fold k
// with labels 1{Y <= y_j}, then predict at every unit in fold k (both arms).
template <class Learner>
void cross_fit_cdf(const ExperimentDataset& ds, const LocationGrid& grid, const Learner& learner, const FoldPlan& plan,
                   std::uint64_t seed, CrossFitPredictions& out, unsigned threads = 1) {
  const auto split = detail::split_folds(ds, plan);
  const std::size_t K = plan.folds;
  const std::size_t J1 = grid.size();
  if (out.units != ds.size() || out.grid != grid || out.cdf[0].size() != J1)
    throw Error("cross_fit_cdf: prediction buffer does not match the dataset and grid");
  std::array<std::vector<Matrix>, 2> train_x;
  for (int d = 0; d < 2; ++d)
    for (std::size_t k = 0; k < K; ++k)
      train_x[static_cast<std::size_t>(d)].push_back(ds.covariates().select_rows(split.train[static_cast<std::size_t>(d)][k]));
  std::vector<Matrix> test_x;
  for (std::size_t k = 0; k < K; ++k) test_x.push_back(ds.covariates().select_rows(split.test[k]));

  const double eps = kClipEps;
  std::vector<std::size_t> nonconverged(2 * K * J1, 0);
  parallel_for(2 * K * J1, threads, [&](std::size_t task) {
    const std::size_t j = task % J1;
    const std::size_t k = (task / J1) % K;
    const std::size_t d = task / (J1 * K);
    const auto& rows = split.train[d][k];
    const double y = grid.location(j);
    std::vector<double> labels(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = ds.outcome()[rows[r]] <= y ? 1.0 : 0.0;
    const auto model = learner.fit(train_x[d][k], labels, derive_seed(seed, {d, k, j}));
    detail::count_nonconverged(model, nonconverged[task]);
    auto& target = out.cdf[d][j];
    const auto& test = split.test[k];
    for (std::size_t r = 0; r < test.size(); ++r) target[test[r]] = clip_probability(model.predict(test_x[k].row(r)), eps);
  });
  out.nonconverged_fits += std::accumulate(nonconverged.begin(), nonconverged.end(), std::size_t{0});
}

template <class Learner>
void cross_fit_mean(const ExperimentDataset& ds, const Learner& learner, const FoldPlan& plan, std::uint64_t seed,
                    CrossFitPredictions& out, unsigned threads = 1) {
  const auto split = detail::split_folds(ds, plan);
  const std::size_t K = plan.folds;
  if (out.units != ds.size() || out.mean[0].size() != ds.size())
    throw Error("cross_fit_mean: prediction buffer does not match the dataset");
  parallel_for(2 * K, threads, [&](std::size_t task) {
    const std::size_t k = task % K;
    const std::size_t d = task / K;
    const auto& rows = split.train[d][k];
    std::vector<double> targets(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) targets[r] = ds.outcome()[rows[r]];
    const auto model = learner.fit(ds.covariates().select_rows(rows), targets, derive_seed(seed, {0x3EA9, d, k}));
    const auto& test = split.test[k];
    for (auto i : test) out.mean[d][i] = model.predict(ds.covariates().row(i));
  });
}

// Both nuisances with learners chosen at runtime.
inline CrossFitPredictions cross_fit(const ExperimentDataset& ds, const LocationGrid& grid, const NuisanceConfig& cfg,
                                     const FoldPlan& plan, unsigned threads = 1) {
  CrossFitPredictions out = CrossFitPredictions::empty(grid, ds.size());
  std::visit([&](const auto& l) { cross_fit_cdf(ds, grid, l, plan, cfg.seed, out, threads); }, make_cdf_learner(cfg));
  std::visit([&](const auto& l) { cross_fit_mean(ds, l, plan, cfg.seed, out, threads); }, make_mean_learner(cfg));
  return out;
}

inline CrossFitPredictions cross_fit(const ExperimentDataset& ds, const LocationGrid& grid, const NuisanceConfig& cfg,
                                     unsigned threads = 1) {
  return cross_fit(ds, grid, cfg, make_fold_plan(ds, cfg.folds, cfg.seed), threads);
}

}  // namespace dtelab
