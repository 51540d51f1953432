#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dtelab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A rejected input record. `row` is the 0-based data row; `line` the 1-based
// source line when the record came from a file (0 otherwise).
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::size_t row, std::size_t line = 0)
      : Error(what), row_(row), line_(line) {}
  std::size_t row() const noexcept { return row_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t row_;
  std::size_t line_;
};

enum class Arm : std::uint8_t { control = 0, treated = 1 };

inline const char* arm_name(int d) { return d == 1 ? "treated" : "control"; }

// Dense row-major matrix of covariates.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error("matrix data size mismatch");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t k = 0; k < idx.size(); ++k) std::ranges::copy(row(idx[k]), out.row(k).begin());
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Unparsed tabular input: a header plus string cells. `lines` holds the
// 1-based source line of each row when known.
struct RawTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;
};

namespace detail {

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

class ExperimentDataset {
 public:
  ExperimentDataset() = default;

  // Validates and builds a dataset. Throws ValidationError naming the first
  // offending row.
  static ExperimentDataset create(std::vector<std::uint8_t> d, std::vector<double> y, Matrix x,
                                  std::vector<std::string> covariate_names, double rho) {
    const std::size_t n = d.size();
    if (y.size() != n) throw Error("treatment and outcome columns differ in length");
    if (x.rows() != n) throw Error("covariate matrix row count differs from unit count");
    if (covariate_names.size() != x.cols()) throw Error("covariate name count differs from column count");
    if (!(rho > 0.0 && rho < 1.0)) throw Error("assignment probability rho must lie in (0,1), got " + std::to_string(rho));
    std::set<std::string> seen;
    for (const auto& name : covariate_names)
      if (!seen.insert(name).second) throw Error("duplicate covariate name '" + name + "'");
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d[i] > 1) throw ValidationError("non-binary treatment at row " + std::to_string(i), i);
      if (!std::isfinite(y[i]) || y[i] < 0.0)
        throw ValidationError("negative or non-finite outcome at row " + std::to_string(i), i);
      for (double v : x.row(i))
        if (!std::isfinite(v)) throw ValidationError("non-finite covariate at row " + std::to_string(i), i);
      n1 += d[i];
    }
    if (n1 == 0) throw Error("empty arm: no treated units");
    if (n1 == n) throw Error("empty arm: no control units");
    ExperimentDataset out;
    out.d_ = std::move(d);
    out.y_ = std::move(y);
    out.x_ = std::move(x);
    out.names_ = std::move(covariate_names);
    out.rho_ = rho;
    out.n1_ = n1;
    return out;
  }

  std::size_t size() const noexcept { return d_.size(); }
  std::size_t n_treated() const noexcept { return n1_; }
  std::size_t n_control() const noexcept { return d_.size() - n1_; }
  std::size_t n_arm(int arm) const noexcept { return arm == 1 ? n_treated() : n_control(); }
  std::size_t covariate_count() const noexcept { return x_.cols(); }
  double rho() const noexcept { return rho_; }

  const std::vector<std::uint8_t>& treatment() const noexcept { return d_; }
  const std::vector<double>& outcome() const noexcept { return y_; }
  const Matrix& covariates() const noexcept { return x_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }

  std::optional<std::size_t> covariate_index(std::string_view name) const {
    for (std::size_t k = 0; k < names_.size(); ++k)
      if (names_[k] == name) return k;
    return std::nullopt;
  }

  // Rows in the given order (duplicates allowed). Throws if an arm ends up empty.
  ExperimentDataset select(std::span<const std::size_t> idx) const {
    std::vector<std::uint8_t> d(idx.size());
    std::vector<double> y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      d[k] = d_[idx[k]];
      y[k] = y_[idx[k]];
    }
    return create(std::move(d), std::move(y), x_.select_rows(idx), names_, rho_);
  }

  friend bool operator==(const ExperimentDataset&, const ExperimentDataset&) = default;

 private:
  std::vector<std::uint8_t> d_;
  std::vector<double> y_;
  Matrix x_;
  std::vector<std::string> names_;
  double rho_ = 0.5;
  std::size_t n1_ = 0;
};

// Parses raw records: column `d` (0/1), column `y`, every other column a
// covariate. Errors name the data row and, when known, the source line.
inline ExperimentDataset validate_dataset(const RawTable& raw, double rho) {
  auto find = [&](std::string_view name) -> std::size_t {
    for (std::size_t k = 0; k < raw.header.size(); ++k)
      if (raw.header[k] == name) return k;
    throw Error("missing required column '" + std::string(name) + "'" +
                (raw.source.empty() ? std::string() : " in " + raw.source));
  };
  const std::size_t dcol = find("d");
  const std::size_t ycol = find("y");
  std::vector<std::size_t> xcols;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < raw.header.size(); ++k) {
    if (k == dcol || k == ycol) continue;
    xcols.push_back(k);
    names.push_back(raw.header[k]);
  }
  const std::size_t n = raw.rows.size();
  auto where = [&](std::size_t i) {
    std::size_t line = i < raw.lines.size() ? raw.lines[i] : 0;
    std::string s = raw.source.empty() ? std::string() : raw.source + ":";
    if (line) s += std::to_string(line) + ": ";
    else if (!s.empty()) s += " ";
    return std::pair{s, line};
  };
  auto fail = [&](std::size_t i, const std::string& msg) {
    auto [prefix, line] = where(i);
    throw ValidationError(prefix + msg, i, line);
  };

  std::vector<std::uint8_t> d(n);
  std::vector<double> y(n);
  Matrix x(n, xcols.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = raw.rows[i];
    if (row.size() != raw.header.size())
      fail(i, "ragged row " + std::to_string(i) + ": expected " + std::to_string(raw.header.size()) +
                  " fields, found " + std::to_string(row.size()));
    auto dv = detail::parse_double(row[dcol]);
    if (!dv || (*dv != 0.0 && *dv != 1.0))
      fail(i, "non-binary treatment at row " + std::to_string(i) + " (value '" + row[dcol] + "')");
    d[i] = static_cast<std::uint8_t>(*dv);
    auto yv = detail::parse_double(row[ycol]);
    if (!yv || !std::isfinite(*yv) || *yv < 0.0)
      fail(i, "negative or non-numeric outcome at row " + std::to_string(i) + " (value '" + row[ycol] + "')");
    y[i] = *yv;
    for (std::size_t k = 0; k < xcols.size(); ++k) {
      auto xv = detail::parse_double(row[xcols[k]]);
      if (!xv || !std::isfinite(*xv))
        fail(i, "non-numeric covariate '" + names[k] + "' at row " + std::to_string(i) + " (value '" +
                    row[xcols[k]] + "')");
      x(i, k) = *xv;
    }
  }
  try {
    return ExperimentDataset::create(std::move(d), std::move(y), std::move(x), std::move(names), rho);
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw Error((raw.source.empty() ? std::string() : raw.source + ": ") + e.what());
  }
}

inline ExperimentDataset validate_dataset(const ExperimentDataset& ds) {
  return ExperimentDataset::create(ds.treatment(), ds.outcome(), ds.covariates(), ds.covariate_names(), ds.rho());
}

// Evenly spaced integer locations 0, h, 2h, ..., J*h.
class LocationGrid {
 public:
  LocationGrid(std::int64_t step, std::size_t intervals) : step_(step), count_(intervals) {
    if (step < 1) throw Error("grid step must be a positive integer");
    if (intervals < 1) throw Error("grid needs at least one interval");
  }

  std::int64_t step() const noexcept { return step_; }
  std::size_t intervals() const noexcept { return count_; }
  std::size_t size() const noexcept { return count_ + 1; }
  double location(std::size_t j) const noexcept { return static_cast<double>(step_ * static_cast<std::int64_t>(j)); }
  double max_location() const noexcept { return location(count_); }

  std::vector<double> locations() const {
    std::vector<double> out(size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = location(j);
    return out;
  }

  friend bool operator==(const LocationGrid&, const LocationGrid&) = default;

 private:
  std::int64_t step_;
  std::size_t count_;
};

enum class GridBase { pooled, control };

// Lower empirical quantile: the smallest observation v with ECDF(v) >= p.
inline double empirical_quantile_lower(std::vector<double> values, double p) {
  if (values.empty()) throw Error("quantile of empty sample");
  std::ranges::sort(values);
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size()) - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

// Step h = max(1, ceil(q / J)) where q is the p-quantile of the outcomes, so
// the top location J*h is an integer at or above q.
inline LocationGrid build_grid(const ExperimentDataset& ds, double percentile = 0.99, std::size_t intervals = 20,
                               GridBase base = GridBase::pooled) {
  if (!(percentile > 0.0 && percentile <= 1.0)) throw Error("grid percentile must lie in (0,1]");
  if (intervals < 1) throw Error("grid needs at least one interval");
  if (ds.size() == 0) throw Error("cannot build a grid from an empty dataset");
  std::vector<double> ys;
  if (base == GridBase::pooled) {
    ys = ds.outcome();
  } else {
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.treatment()[i] == 0) ys.push_back(ds.outcome()[i]);
  }
  const double q = empirical_quantile_lower(std::move(ys), percentile);
  if (q <= 0.0)
    throw Error("degenerate grid: the outcome percentile is 0; supply an explicit grid step");
  auto h = static_cast<std::int64_t>(std::ceil(q / static_cast<double>(intervals) - 1e-12));
  return LocationGrid(std::max<std::int64_t>(1, h), intervals);
}

// Units whose covariate row satisfies `pred`. Same rho and schema.
template <class Predicate>
ExperimentDataset subset_by_group(const ExperimentDataset& ds, Predicate&& pred) {
  std::vector<std::size_t> keep;
  std::size_t n1 = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (pred(ds.covariates().row(i))) {
      keep.push_back(i);
      n1 += ds.treatment()[i];
    }
  }
  if (n1 == 0) throw Error("subgroup has an empty treated arm");
  if (n1 == keep.size()) throw Error("subgroup has an empty control arm");
  return ds.select(keep);
}

enum class EstimatorKind { unadjusted, adjusted };

inline const char* to_string(EstimatorKind k) { return k == EstimatorKind::adjusted ? "adjusted" : "unadjusted"; }

// Estimated marginal CDFs of both arms on a grid.
struct CdfPair {
  LocationGrid grid{1, 1};
  std::vector<double> f1;
  std::vector<double> f0;
  EstimatorKind kind = EstimatorKind::unadjusted;
  // Adjusted estimates pushed back into [0,1], per arm.
  std::size_t clamped_f1 = 0;
  std::size_t clamped_f0 = 0;

  const std::vector<double>& arm(int d) const { return d == 1 ? f1 : f0; }
};

enum class EffectKind { dte, pte };

// A point estimate with optional bootstrap uncertainty.
struct Estimate {
  double point = 0.0;
  std::optional<double> se;
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
};

// DTE: one entry per grid location. PTE: one entry per bin (y_j, y_j + span]
// for j = 0..J - span/h, plus the atom at zero (equal to DTE(0)).
struct EffectCurve {
  LocationGrid grid{1, 1};
  EffectKind kind = EffectKind::dte;
  std::int64_t span = 0;
  std::vector<double> point;
  std::vector<double> se;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::optional<Estimate> zero_atom;

  bool has_inference() const noexcept { return !se.empty(); }

  // Left endpoints of the entries in `point`.
  double location(std::size_t j) const noexcept { return grid.location(j); }

  // Flattened statistic vector: [zero atom (PTE only), point...].
  std::vector<double> values() const {
    std::vector<double> out;
    if (zero_atom) out.push_back(zero_atom->point);
    out.insert(out.end(), point.begin(), point.end());
    return out;
  }
};

struct AteResult {
  double point = 0.0;
  double se = 0.0;
  EstimatorKind kind = EstimatorKind::unadjusted;
  double control_mean = 0.0;
};

}  // namespace dtelab
