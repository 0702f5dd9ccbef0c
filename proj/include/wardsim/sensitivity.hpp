#pragma once

// Parameter sensitivity: tree-based importance, forward-selection linear
// screening and 2-D slices through the surrogate fitness landscape.

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "wardsim/common.hpp"
#include "wardsim/model.hpp"
#include "wardsim/optimize.hpp"
#include "wardsim/regression_tree.hpp"

namespace wardsim {

struct ScreeningTerm {
  int variable = -1;  // 0-based column, -1 for the intercept
  std::string name;
  double coefficient = 0.0;
  double std_error = 0.0;
  double t_value = 0.0;
  double p_value = 1.0;
};

struct ScreeningReport {
  ScreeningTerm intercept;
  std::vector<ScreeningTerm> terms;  // in selection order
  double r2 = 0.0;
  double adj_r2 = 0.0;
  std::size_t observations = 0;
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;
};

namespace detail {

struct OlsFit {
  bool full_rank = false;
  Eigen::VectorXd coef;
  Eigen::VectorXd std_error;
  double rss = 0.0;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  Eigen::VectorXd residuals;
};

/// OLS with intercept on the selected columns.
inline OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const int> columns) {
  const Eigen::Index n = x.rows();
  const auto p = static_cast<Eigen::Index>(columns.size()) + 1;
  Eigen::MatrixXd a(n, p);
  a.col(0).setOnes();
  for (Eigen::Index k = 1; k < p; ++k) a.col(k) = x.col(columns[static_cast<std::size_t>(k - 1)]);

  OlsFit fit;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) return fit;
  fit.full_rank = true;
  fit.coef = qr.solve(y);
  fit.residuals = y - a * fit.coef;
  fit.rss = fit.residuals.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  const auto dn = static_cast<double>(n), dp = static_cast<double>(p);
  fit.r2 = tss > 0.0 ? 1.0 - fit.rss / tss : 0.0;
  fit.adj_r2 = 1.0 - (1.0 - fit.r2) * (dn - 1.0) / (dn - dp);
  const double sigma2 = n > p ? fit.rss / (dn - dp) : 0.0;
  const Eigen::MatrixXd xtx_inv = (a.transpose() * a).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.std_error = (sigma2 * xtx_inv.diagonal().array()).max(0.0).sqrt();
  return fit;
}

inline ScreeningTerm make_term(int variable, std::string name, double coef, double se, double df) {
  ScreeningTerm t{variable, std::move(name), coef, se, 0.0, 1.0};
  if (se > 0.0) {
    t.t_value = coef / se;
    boost::math::students_t dist(df);
    t.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t.t_value)));
  } else if (coef != 0.0) {
    t.t_value = std::copysign(std::numeric_limits<double>::infinity(), coef);
    t.p_value = 0.0;
  }
  t.p_value = std::clamp(t.p_value, 0.0, 1.0);
  return t;
}

}  // namespace detail

/// Forward selection by adjusted R^2 (up to max_terms variables), then OLS on
/// the retained set. Rows with non-finite values are dropped; columns that
/// make the design rank deficient are skipped with a warning.
inline ScreeningReport fit_linear_screen(const Samples& x, std::span<const double> y, std::size_t max_terms,
                                         std::span<const std::string> names = {}) {
  if (x.size() != y.size()) throw ValidationError("screening needs matching X and y");
  ScreeningReport report;
  const std::size_t dims = x.empty() ? 0 : x.front().size();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < x.size(); ++i) {
    bool ok = std::isfinite(y[i]) && x[i].size() == dims;
    for (double v : x[i]) ok = ok && std::isfinite(v);
    if (ok) keep.push_back(i);
  }
  report.dropped_rows = x.size() - keep.size();
  if (report.dropped_rows > 0)
    report.warnings.push_back("dropped " + std::to_string(report.dropped_rows) + " rows with missing values");
  if (keep.size() <= max_terms + 1)
    throw ValidationError("screening needs more than max_terms + 1 complete observations");

  const auto n = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd xm(n, static_cast<Eigen::Index>(dims));
  Eigen::VectorXd ym(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = x[keep[static_cast<std::size_t>(r)]];
    for (std::size_t c = 0; c < dims; ++c) xm(r, static_cast<Eigen::Index>(c)) = row[c];
    ym(r) = y[keep[static_cast<std::size_t>(r)]];
  }
  auto name_of = [&](int c) {
    return static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)]
                                                       : "x" + std::to_string(c + 1);
  };

  std::vector<int> selected;
  std::vector<bool> excluded(dims, false);
  double current_adj = 0.0;
  while (selected.size() < max_terms) {
    int best = -1;
    double best_adj = current_adj;
    for (std::size_t c = 0; c < dims; ++c) {
      const int col = static_cast<int>(c);
      if (excluded[c] || std::find(selected.begin(), selected.end(), col) != selected.end()) continue;
      auto trial = selected;
      trial.push_back(col);
      const auto fit = detail::ols(xm, ym, trial);
      if (!fit.full_rank) {
        excluded[c] = true;
        report.warnings.push_back("dropped " + name_of(col) + ": rank-deficient design");
        continue;
      }
      if (fit.adj_r2 > best_adj) {
        best_adj = fit.adj_r2;
        best = col;
      }
    }
    if (best < 0) break;
    selected.push_back(best);
    current_adj = best_adj;
  }

  const auto fit = detail::ols(xm, ym, selected);
  const double df = static_cast<double>(n) - static_cast<double>(selected.size() + 1);
  report.observations = keep.size();
  report.r2 = fit.r2;
  report.adj_r2 = fit.adj_r2;
  report.intercept = detail::make_term(-1, "(Intercept)", fit.coef(0), fit.std_error(0), df);
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const auto e = static_cast<Eigen::Index>(k + 1);
    report.terms.push_back(detail::make_term(selected[k], name_of(selected[k]), fit.coef(e), fit.std_error(e), df));
  }
  return report;
}

/// Surrogate values over a grid of dims (i, j); values[a][b] sits at (x_axis[a], y_axis[b]).
struct SliceResult {
  std::size_t dim_i = 0;
  std::size_t dim_j = 0;
  std::vector<double> x_axis;
  std::vector<double> y_axis;
  std::vector<std::vector<double>> values;
};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n == 1) return {lo};
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k)
    out[k] = (lo * static_cast<double>(n - 1 - k) + hi * static_cast<double>(k)) / static_cast<double>(n - 1);
  return out;
}

/// Fits the bagged-tree surrogate on the finite history points and evaluates it
/// over the bounds of dims i and j; other coordinates come from `base`
/// (default: the best evaluated point).
inline SliceResult surrogate_slice(std::span<const EvalRecord> history, std::size_t i, std::size_t j,
                                   std::size_t grid, const Bounds& bounds,
                                   std::optional<std::vector<double>> base = std::nullopt,
                                   const EnsembleOptions& ensemble = {}) {
  bounds.validate();
  if (i == j) throw ValidationError("slice dimensions must differ");
  if (i >= bounds.dims() || j >= bounds.dims()) throw ValidationError("slice dimension out of range");
  if (grid < 1) throw ValidationError("slice grid must be >= 1");
  Samples x;
  std::vector<double> y;
  for (const auto& rec : history)
    if (std::isfinite(rec.y)) {
      x.push_back(rec.x);
      y.push_back(rec.y);
    }
  if (x.empty()) throw ValidationError("history has no finite evaluations");
  const auto model = BaggedTrees::fit(x, y, ensemble);

  std::vector<double> point = base ? *base : history[best_index(history)].x;
  SliceResult s{i, j, linspace(bounds.lower[i], bounds.upper[i], grid),
                linspace(bounds.lower[j], bounds.upper[j], grid), {}};
  s.values.assign(grid, std::vector<double>(grid));
  for (std::size_t a = 0; a < grid; ++a)
    for (std::size_t b = 0; b < grid; ++b) {
      point[i] = s.x_axis[a];
      point[j] = s.y_axis[b];
      s.values[a][b] = model.predict(point);
    }
  return s;
}

inline void write_slice_csv(std::ostream& out, const SliceResult& s) {
  out << "x,y,value\n";
  for (std::size_t a = 0; a < s.x_axis.size(); ++a)
    for (std::size_t b = 0; b < s.y_axis.size(); ++b)
      out << format_number(s.x_axis[a]) << ',' << format_number(s.y_axis[b]) << ',' << format_number(s.values[a][b])
          << '\n';
}

inline void to_json(nlohmann::json& j, const SliceResult& s) {
  j = {{"dims", {s.dim_i + 1, s.dim_j + 1}}, {"x", s.x_axis}, {"y", s.y_axis}, {"values", s.values}};
}

inline void to_json(nlohmann::json& j, const ScreeningTerm& t) {
  j = {{"variable", t.variable < 0 ? nlohmann::json(nullptr) : nlohmann::json(t.variable + 1)},
       {"name", t.name},
       {"coefficient", t.coefficient},
       {"stdError", t.std_error},
       {"tValue", std::isfinite(t.t_value) ? nlohmann::json(t.t_value) : nlohmann::json(nullptr)},
       {"pValue", t.p_value}};
}

inline void to_json(nlohmann::json& j, const ScreeningReport& r) {
  j = {{"intercept", r.intercept}, {"terms", r.terms},         {"r2", r.r2},
       {"adjR2", r.adj_r2},        {"observations", r.observations}, {"droppedRows", r.dropped_rows},
       {"warnings", r.warnings}};
}

/// Importance keyed by canonical parameter name (or x<k> beyond 29 dims).
inline nlohmann::json importance_json(std::span<const double> importance) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t k = 0; k < importance.size(); ++k) {
    const std::string name = k < kParamCount ? std::string{kParamNames[k]} : "x" + std::to_string(k + 1);
    j.push_back({{"index", k + 1}, {"name", name}, {"importance", importance[k]}});
  }
  return j;
}

}  // namespace wardsim
