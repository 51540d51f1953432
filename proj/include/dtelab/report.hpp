#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dtelab/core_model.hpp"
#include "dtelab/csv.hpp"
#include "dtelab/diagnostics.hpp"

namespace dtelab {

namespace detail {

inline std::string opt_number(const std::vector<double>& v, std::size_t j) {
  return j < v.size() ? format_number(v[j]) : "NA";
}

}  // namespace detail

inline const std::string kEffectsHeader = "location,f1,f0,dte,dte_se,dte_lo,dte_hi,pte,pte_se,pte_lo,pte_hi";

// One row per grid location. PTE columns hold the bin (location, location +
// span]; rows whose bin leaves the grid are NA. Estimator metadata sits in a
// leading block of '#' lines.
inline std::string effects_csv(const CdfPair& cdf, const EffectCurve& dte_curve, const EffectCurve& pte_curve) {
  std::string out;
  out += std::string("# estimator: ") + to_string(cdf.kind) + "\n";
  out += "# clamped_f1: " + std::to_string(cdf.clamped_f1) + "\n";
  out += "# clamped_f0: " + std::to_string(cdf.clamped_f0) + "\n";
  out += "# pte_span: " + std::to_string(pte_curve.span) + "\n";
  if (pte_curve.zero_atom) {
    const auto& a = *pte_curve.zero_atom;
    auto f = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("NA"); };
    out += "# pte_zero_atom: " + format_number(a.point) + "," + f(a.se) + "," + f(a.ci_lo) + "," + f(a.ci_hi) + "\n";
  }
  out += kEffectsHeader + "\n";
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < cdf.grid.size(); ++j) {
    out += format_number(cdf.grid.location(j));
    out += "," + format_number(cdf.f1[j]) + "," + format_number(cdf.f0[j]);
    out += "," + format_number(dte_curve.point[j]);
    out += "," + detail::opt_number(dte_curve.se, j) + "," + detail::opt_number(dte_curve.ci_lo, j) + "," +
           detail::opt_number(dte_curve.ci_hi, j);
    out += "," + format_number(j < pte_curve.point.size() ? pte_curve.point[j] : nan);
    out += "," + detail::opt_number(pte_curve.se, j) + "," + detail::opt_number(pte_curve.ci_lo, j) + "," +
           detail::opt_number(pte_curve.ci_hi, j);
    out += "\n";
  }
  return out;
}

// Rows in reporting order: unadjusted first, then adjusted.
inline std::string ate_csv(const std::vector<AteResult>& rows) {
  std::string out = "kind,point,se,control_mean\n";
  for (const auto& r : rows)
    out += std::string(to_string(r.kind)) + "," + format_number(r.point) + "," + format_number(r.se) + "," +
           format_number(r.control_mean) + "\n";
  return out;
}

inline std::string balance_csv(const std::vector<BalanceRow>& rows) {
  std::string out = "variable,mean_diff,se,t\n";
  for (const auto& r : rows)
    out += r.variable + "," + format_number(r.mean_diff) + "," + format_number(r.se) + "," +
           (r.degenerate ? std::string("NA") : format_number(r.t)) + "\n";
  return out;
}

struct EffectsTable {
  CdfPair cdf;
  EffectCurve dte;
  EffectCurve pte;
};

// Inverse of effects_csv, for re-plotting.
inline EffectsTable parse_effects_csv(const std::string& text, const std::string& source = "effects.csv") {
  std::string body;
  std::int64_t span = 0;
  std::optional<Estimate> atom;
  EstimatorKind kind = EstimatorKind::unadjusted;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.starts_with("# ")) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = line.substr(2, colon - 2);
      const std::string value = line.substr(std::min(line.size(), colon + 2));
      if (key == "pte_span") span = std::stoll(value);
      if (key == "estimator") kind = value == "adjusted" ? EstimatorKind::adjusted : EstimatorKind::unadjusted;
      if (key == "pte_zero_atom") {
        auto fields = detail::split_csv_record(value, 0, source);
        if (fields.size() != 4) throw Error(source + ": malformed pte_zero_atom line");
        Estimate e;
        e.point = detail::parse_double(fields[0]).value_or(0.0);
        if (auto v = detail::parse_double(fields[1])) e.se = *v;
        if (auto v = detail::parse_double(fields[2])) e.ci_lo = *v;
        if (auto v = detail::parse_double(fields[3])) e.ci_hi = *v;
        atom = e;
      }
      continue;
    }
    body += line + "\n";
  }
  const RawTable t = parse_csv(body, source);
  if (t.rows.size() < 2) throw Error(source + ": expected at least two grid rows");
  const std::vector<std::string> expected = detail::split_csv_record(kEffectsHeader, 0, source);
  if (t.header != expected) throw Error(source + ": unexpected header, expected '" + kEffectsHeader + "'");
  auto num = [&](std::size_t r, std::size_t c) {
    if (t.rows[r].size() != expected.size())
      throw Error(source + ":" + std::to_string(t.lines[r]) + ": wrong field count");
    return detail::parse_double(t.rows[r][c]);
  };
  const auto loc0 = num(0, 0);
  const auto loc1 = num(1, 0);
  if (!loc0 || !loc1) throw Error(source + ": non-numeric location");
  const auto step = static_cast<std::int64_t>(*loc1 - *loc0);
  LocationGrid grid(step, t.rows.size() - 1);
  EffectsTable out;
  out.cdf.grid = grid;
  out.cdf.kind = kind;
  out.dte.grid = grid;
  out.dte.kind = EffectKind::dte;
  out.pte.grid = grid;
  out.pte.kind = EffectKind::pte;
  out.pte.span = span == 0 ? step : span;
  out.pte.zero_atom = atom;
  bool dte_inf = true;
  bool pte_inf = true;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto at = [&](std::size_t c) { return num(r, c); };
    if (auto v = at(0); !v || *v != grid.location(r)) throw Error(source + ": locations are not evenly spaced");
    out.cdf.f1.push_back(at(1).value_or(0.0));
    out.cdf.f0.push_back(at(2).value_or(0.0));
    out.dte.point.push_back(at(3).value_or(0.0));
    if (auto se = at(4), lo = at(5), hi = at(6); se && lo && hi) {
      out.dte.se.push_back(*se);
      out.dte.ci_lo.push_back(*lo);
      out.dte.ci_hi.push_back(*hi);
    } else {
      dte_inf = false;
    }
    if (auto p = at(7)) {
      out.pte.point.push_back(*p);
      if (auto se = at(8), lo = at(9), hi = at(10); se && lo && hi) {
        out.pte.se.push_back(*se);
        out.pte.ci_lo.push_back(*lo);
        out.pte.ci_hi.push_back(*hi);
      } else {
        pte_inf = false;
      }
    }
  }
  if (!dte_inf) out.dte.se.clear(), out.dte.ci_lo.clear(), out.dte.ci_hi.clear();
  if (!pte_inf) out.pte.se.clear(), out.pte.ci_lo.clear(), out.pte.ci_hi.clear();
  return out;
}

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s(buf);
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

struct PlotFrame {
  double width = 640;
  double height = 400;
  double left = 70;
  double right = 20;
  double top = 30;
  double bottom = 55;
  double x_min = 0;
  double x_max = 1;
  double y_min = -1;
  double y_max = 1;

  double px(double x) const { return left + (x - x_min) / (x_max - x_min) * (width - left - right); }
  double py(double y) const { return top + (y_max - y) / (y_max - y_min) * (height - top - bottom); }
};

inline double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) return m * mag;
  return 10.0 * mag;
}

inline void fit_y_range(PlotFrame& f, const std::vector<double>& values) {
  double lo = 0.0;
  double hi = 0.0;
  for (double v : values)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi - lo < 1e-9) lo -= 0.01, hi += 0.01;
  const double pad = 0.08 * (hi - lo);
  f.y_min = lo - pad;
  f.y_max = hi + pad;
}

inline std::string axes(const PlotFrame& f, const std::string& title, const std::string& x_label,
                        const std::string& y_label) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(f.width, 0) + "\" height=\"" +
       fixed(f.height, 0) + "\" viewBox=\"0 0 " + fixed(f.width, 0) + " " + fixed(f.height, 0) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + fixed(f.width, 0) + "\" height=\"" + fixed(f.height, 0) +
       "\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(f.width / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + title +
       "</text>\n";
  const double x0 = f.px(f.x_min);
  const double x1 = f.px(f.x_max);
  const double y0 = f.py(f.y_min);
  const double y1 = f.py(f.y_max);
  s += "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fixed(x0) + "\" y1=\"" + fixed(y0) + "\" x2=\"" + fixed(x1) + "\" y2=\"" + fixed(y0) + "\"/>\n";
  s += "<line x1=\"" + fixed(x0) + "\" y1=\"" + fixed(y0) + "\" x2=\"" + fixed(x0) + "\" y2=\"" + fixed(y1) + "\"/>\n";
  s += "</g>\n";
  const double xs = nice_step(f.x_max - f.x_min, 8);
  for (double x = std::ceil(f.x_min / xs) * xs; x <= f.x_max + 1e-9; x += xs) {
    s += "<line x1=\"" + fixed(f.px(x)) + "\" y1=\"" + fixed(y0) + "\" x2=\"" + fixed(f.px(x)) + "\" y2=\"" +
         fixed(y0 + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fixed(f.px(x)) + "\" y=\"" + fixed(y0 + 18) + "\" text-anchor=\"middle\">" +
         format_number(std::round(x * 100.0) / 100.0) + "</text>\n";
  }
  const double ys = nice_step(f.y_max - f.y_min, 6);
  const int digits = ys >= 1 ? 0 : static_cast<int>(std::ceil(-std::log10(ys) + 1e-9));
  for (double y = std::ceil(f.y_min / ys) * ys; y <= f.y_max + 1e-12; y += ys) {
    s += "<line x1=\"" + fixed(x0 - 5) + "\" y1=\"" + fixed(f.py(y)) + "\" x2=\"" + fixed(x0) + "\" y2=\"" +
         fixed(f.py(y)) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fixed(x0 - 8) + "\" y=\"" + fixed(f.py(y) + 4) + "\" text-anchor=\"end\">" +
         fixed(y, digits) + "</text>\n";
  }
  s += "<text x=\"" + fixed((x0 + x1) / 2) + "\" y=\"" + fixed(f.height - 12) + "\" text-anchor=\"middle\">" +
       x_label + "</text>\n";
  s += "<text transform=\"translate(16," + fixed((y0 + y1) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       y_label + "</text>\n";
  // zero reference
  s += "<line x1=\"" + fixed(x0) + "\" y1=\"" + fixed(f.py(0)) + "\" x2=\"" + fixed(x1) + "\" y2=\"" +
       fixed(f.py(0)) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  return s;
}

}  // namespace detail

// Solid DTE curve with a shaded pointwise band; the atom at zero gets its own marker.
inline std::string dte_svg(const EffectCurve& curve, const std::string& unit_label = "minutes") {
  detail::PlotFrame f;
  f.x_max = std::max(1.0, curve.grid.max_location());
  std::vector<double> all = curve.point;
  all.insert(all.end(), curve.ci_lo.begin(), curve.ci_lo.end());
  all.insert(all.end(), curve.ci_hi.begin(), curve.ci_hi.end());
  detail::fit_y_range(f, all);
  std::string s = detail::axes(f, "Distributional treatment effect", "Outcome (" + unit_label + ")", "DTE");
  if (curve.has_inference()) {
    std::string pts;
    for (std::size_t j = 0; j < curve.point.size(); ++j)
      pts += detail::fixed(f.px(curve.location(j))) + "," + detail::fixed(f.py(curve.ci_hi[j])) + " ";
    for (std::size_t j = curve.point.size(); j-- > 0;)
      pts += detail::fixed(f.px(curve.location(j))) + "," + detail::fixed(f.py(curve.ci_lo[j])) + " ";
    pts.pop_back();
    s += "<polygon points=\"" + pts + "\" fill=\"#4a7ebb\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
  }
  std::string line;
  for (std::size_t j = 0; j < curve.point.size(); ++j)
    line += detail::fixed(f.px(curve.location(j))) + "," + detail::fixed(f.py(curve.point[j])) + " ";
  if (!line.empty()) line.pop_back();
  s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"2\"/>\n";
  if (!curve.point.empty())
    s += "<circle cx=\"" + detail::fixed(f.px(0)) + "\" cy=\"" + detail::fixed(f.py(curve.point[0])) +
         "\" r=\"4\" fill=\"#c0392b\"><title>atom at 0</title></circle>\n";
  s += "</svg>\n";
  return s;
}

// Bars over (y_j, y_j + span] with interval whiskers; the atom at zero is a
// separate narrow bar at 0.
inline std::string pte_svg(const EffectCurve& curve, const std::string& unit_label = "minutes") {
  detail::PlotFrame f;
  const double span = static_cast<double>(std::max<std::int64_t>(1, curve.span));
  f.x_min = -0.5 * span;
  f.x_max = std::max(1.0, curve.grid.max_location());
  std::vector<double> all = curve.point;
  all.insert(all.end(), curve.ci_lo.begin(), curve.ci_lo.end());
  all.insert(all.end(), curve.ci_hi.begin(), curve.ci_hi.end());
  if (curve.zero_atom) {
    all.push_back(curve.zero_atom->point);
    if (curve.zero_atom->ci_lo) all.push_back(*curve.zero_atom->ci_lo);
    if (curve.zero_atom->ci_hi) all.push_back(*curve.zero_atom->ci_hi);
  }
  detail::fit_y_range(f, all);
  std::string s = detail::axes(f, "Probability treatment effect", "Outcome (" + unit_label + ")", "PTE");
  auto bar = [&](double x0, double x1, double v, const char* fill) {
    const double top = f.py(std::max(v, 0.0));
    const double bot = f.py(std::min(v, 0.0));
    s += "<rect x=\"" + detail::fixed(f.px(x0)) + "\" y=\"" + detail::fixed(top) + "\" width=\"" +
         detail::fixed(f.px(x1) - f.px(x0)) + "\" height=\"" + detail::fixed(std::max(bot - top, 0.5)) +
         "\" fill=\"" + fill + "\"/>\n";
  };
  auto whisker = [&](double x, double lo, double hi) {
    const double cx = f.px(x);
    s += "<g stroke=\"black\" stroke-width=\"1\"><line x1=\"" + detail::fixed(cx) + "\" y1=\"" +
         detail::fixed(f.py(lo)) + "\" x2=\"" + detail::fixed(cx) + "\" y2=\"" + detail::fixed(f.py(hi)) +
         "\"/><line x1=\"" + detail::fixed(cx - 3) + "\" y1=\"" + detail::fixed(f.py(lo)) + "\" x2=\"" +
         detail::fixed(cx + 3) + "\" y2=\"" + detail::fixed(f.py(lo)) + "\"/><line x1=\"" + detail::fixed(cx - 3) +
         "\" y1=\"" + detail::fixed(f.py(hi)) + "\" x2=\"" + detail::fixed(cx + 3) + "\" y2=\"" +
         detail::fixed(f.py(hi)) + "\"/></g>\n";
  };
  const double gap = 0.1 * span;
  for (std::size_t j = 0; j < curve.point.size(); ++j) {
    const double x0 = curve.location(j) + gap;
    const double x1 = curve.location(j) + span - gap;
    bar(x0, x1, curve.point[j], "#4a7ebb");
    if (curve.has_inference()) whisker(0.5 * (x0 + x1), curve.ci_lo[j], curve.ci_hi[j]);
  }
  if (curve.zero_atom) {
    const auto& a = *curve.zero_atom;
    bar(-0.2 * span, 0.2 * span, a.point, "#c0392b");
    if (a.ci_lo && a.ci_hi) whisker(0.0, *a.ci_lo, *a.ci_hi);
  }
  s += "</svg>\n";
  return s;
}

}  // namespace dtelab
