#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core_data.hpp"
#include "errors.hpp"
#include "race_place.hpp"
#include "stat_engine.hpp"

namespace rap {

struct SensitivityParams {
  double mean_xi = 1.0;
  double sd_xi = 0.0;
  std::optional<double> rho;  // none = worst case over +-1
};

//! -rho sd(Psi) sd(xi) + E(Psi) (1 - E(xi))
inline double bias_bound(double mean_psi, double sd_psi, const SensitivityParams& p)
{
  if (sd_psi < 0 || p.sd_xi < 0)
    throw Error("standard deviations must be non-negative");
  auto at = [&](double rho) { return -rho * sd_psi * p.sd_xi + mean_psi * (1.0 - p.mean_xi); };
  if (p.rho) {
    if (*p.rho < -1.0 || *p.rho > 1.0)
      throw Error("rho must lie in [-1, 1]");
    return at(*p.rho);
  }
  double a = at(-1.0), b = at(1.0);
  return std::abs(a) >= std::abs(b) ? a : b;
}

inline double max_abs_bias(double mean_psi, double sd_psi, const SensitivityParams& p)
{
  return std::abs(bias_bound(mean_psi, sd_psi, p));
}

struct BoundCurve {
  std::vector<double> grid, est, lo, hi;
  double r0 = 0.6;
};

//! params has one entry (global) or one per grid point
inline BoundCurve bound_curve(const CurveEstimate& c, const std::vector<SensitivityParams>& params)
{
  if (params.size() != 1 && params.size() != c.grid.size())
    throw GridMismatch("sensitivity parameters must be global or per grid point");
  BoundCurve b;
  b.grid = c.grid;
  b.est = c.est;
  b.r0 = c.r0;
  for (std::size_t g = 0; g < c.grid.size(); ++g) {
    const auto& p = params.size() == 1 ? params[0] : params[g];
    if (!(p.mean_xi > 0))
      throw Error("mean_xi must be positive");
    if (c.grid[g] == c.r0) {
      b.lo.push_back(1.0);
      b.hi.push_back(1.0);
      continue;
    }
    double sd = g < c.sd_x.size() ? c.sd_x[g] : 0.0;
    double m = max_abs_bias(c.est[g], sd, p);
    b.lo.push_back(c.est[g] - m);
    b.hi.push_back(c.est[g] + m);
  }
  return b;
}

struct ContourCell {
  double mean_dev, sd, max_bias;
  bool explains;
};

struct BiasContour {
  double psi_hat = 1.0, sd_psi = 0.0;
  std::vector<ContourCell> cells;  // mean_dev major, sd minor
};

inline std::vector<double> linspace(double a, double b, int k)
{
  std::vector<double> v;
  if (k <= 1) {
    v.push_back(a);
    return v;
  }
  for (int i = 0; i < k; ++i)
    v.push_back(a + (b - a) * i / (k - 1));
  return v;
}

//! worst case over rho and the direction of the mean deviation
inline BiasContour contour_grid(double psi_hat, double sd_psi, std::pair<double, double> mean_range,
                                std::pair<double, double> sd_range, int resolution)
{
  if (mean_range.first < 0 || sd_range.first < 0 || mean_range.second < mean_range.first ||
      sd_range.second < sd_range.first)
    throw Error("contour ranges must be non-negative and ordered");
  BiasContour bc;
  bc.psi_hat = psi_hat;
  bc.sd_psi = sd_psi;
  double gap = std::abs(psi_hat - 1.0);
  for (double md : linspace(mean_range.first, mean_range.second, resolution))
    for (double sd : linspace(sd_range.first, sd_range.second, resolution)) {
      double m = std::max(max_abs_bias(psi_hat, sd_psi, {1.0 - md, sd, std::nullopt}),
                          max_abs_bias(psi_hat, sd_psi, {1.0 + md, sd, std::nullopt}));
      bc.cells.push_back({md, sd, m, gap > 0 && m >= gap});
    }
  return bc;
}

// ---------------------------------------------------------------- outcome-ratio xi

struct XiSample {
  Eigen::VectorXd xi;
  double mean = 1.0, sd = 0.0;
};

inline XiSample summarize_xi(Eigen::VectorXd v)
{
  XiSample s;
  s.mean = v.mean();
  s.sd = std::sqrt(std::max(0.0, (v.array() - s.mean).square().mean()));
  s.xi = std::move(v);
  return s;
}

//! Full vs reduced outcome-ratio per row.
//! base = [1, X...] without r; extra = confounder columns present only in the full model.
inline XiSample xi_outcome_ratio(const Eigen::MatrixXd& base, const Eigen::VectorXd& rv, const Eigen::VectorXd& y,
                                 const Eigen::MatrixXd& extra, double r, double r0)
{
  const Eigen::Index n = base.rows(), p = base.cols(), e = extra.cols();
  if (rv.size() != n || y.size() != n || extra.rows() != n)
    throw DimensionMismatch("xi inputs differ in length");
  Eigen::MatrixXd red(n, p + 1), full(n, p + 1 + e);
  red.col(0) = base.col(0);
  red.col(1) = rv;
  red.rightCols(p - 1) = base.rightCols(p - 1);
  full.leftCols(p + 1) = red;
  full.rightCols(e) = extra;
  GlmFit fr = fit_logistic(red, y);
  GlmFit ff = fit_logistic(full, y);
  Eigen::VectorXd lr = red * fr.coef - rv * fr.coef(1);
  Eigen::VectorXd lf = full * ff.coef - rv * ff.coef(1);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double num = sigmoid(lf(i) + ff.coef(1) * r) / sigmoid(lf(i) + ff.coef(1) * r0);
    double den = sigmoid(lr(i) + fr.coef(1) * r) / sigmoid(lr(i) + fr.coef(1) * r0);
    v(i) = r == r0 ? 1.0 : num / den;
  }
  return summarize_xi(std::move(v));
}

//! rows with M=1 and D=1, encoded, with place values
struct OutcomeRows {
  Eigen::MatrixXd base;  // [1, encoded X]
  Eigen::MatrixXd raw;
  Eigen::VectorXd r, y;
  std::optional<Eigen::VectorXd> u;
};

inline OutcomeRows outcome_rows(const EncounterTable& t, const CovariateSchema& schema,
                                const Eigen::VectorXd* precinct_r = nullptr)
{
  if (!t.r && !precinct_r)
    throw Error("place values needed: row-level r column or precinct values");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < t.n(); ++i)
    if (t.m[i] == 1 && t.d[i] == 1)
      rows.push_back(i);
  if (rows.empty())
    throw InsufficientData("no stopped rows with D=1");
  auto sub = t.subset(rows);
  OutcomeRows o;
  Encoder enc(schema, sub.x);
  o.raw = sub.x;
  o.base = enc.matrix(sub.x);
  auto n = static_cast<Eigen::Index>(sub.n());
  o.r.resize(n);
  o.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    o.r(i) = sub.r ? (*sub.r)[static_cast<std::size_t>(i)] : (*precinct_r)(sub.precinct[static_cast<std::size_t>(i)]);
    o.y(i) = sub.y[static_cast<std::size_t>(i)];
  }
  if (sub.u)
    o.u = Eigen::Map<const Eigen::VectorXd>(sub.u->data(), n);
  return o;
}

//! xi-tilde(r, z) with the table's explicit u column as the omitted confounder
inline XiSample xi_from_confounder(const EncounterTable& t, const CovariateSchema& schema, double r, double r0,
                                   const Eigen::VectorXd* precinct_r = nullptr)
{
  if (!t.u)
    throw MissingConfounder("table has no u column");
  auto o = outcome_rows(t, schema, precinct_r);
  return xi_outcome_ratio(o.base, o.r, o.y, *o.u, r, r0);
}

// ---------------------------------------------------------------- covariate-shift LP

enum class Direction { min, max };

struct LpBound {
  double value = 0.0;
  std::vector<double> weights;  // original order, average exactly 1
  std::size_t k = 0;
  double pivot = 1.0;
};

inline LpBound lp_bounds_closed_form(const std::vector<double>& v, double gamma, Direction dir)
{
  if (v.empty())
    throw Error("lp bounds need values");
  if (!(gamma > 1.0))
    throw Error("gamma must exceed 1");
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (dir == Direction::min)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  else
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  double nd = static_cast<double>(n), inv = 1.0 / gamma;
  std::size_t k = 0;
  double pivot = 1.0;
  bool found = false;
  for (; k < n; ++k) {
    pivot = nd - static_cast<double>(k) * gamma - static_cast<double>(n - k - 1) * inv;
    if (pivot >= inv - 1e-12 && pivot <= gamma + 1e-12) {
      found = true;
      break;
    }
  }
  if (!found)
    throw Error("no pivot index found");
  LpBound b;
  b.k = k;
  b.pivot = pivot;
  b.weights.assign(n, inv);
  for (std::size_t i = 0; i < k; ++i)
    b.weights[order[i]] = gamma;
  b.weights[order[k]] = pivot;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    s += b.weights[i] * v[i];
  b.value = s / nd;
  return b;
}

//! exhaustive vertex enumeration of {w in [1/g, g]^n, sum w = n}
inline double lp_bounds_oracle(const std::vector<double>& v, double gamma, Direction dir)
{
  const std::size_t n = v.size();
  if (n == 0)
    throw Error("lp bounds need values");
  if (n > 12)
    throw TooLarge("oracle limited to 12 values");
  double inv = 1.0 / gamma, nd = static_cast<double>(n);
  double best = dir == Direction::min ? std::numeric_limits<double>::infinity()
                                      : -std::numeric_limits<double>::infinity();
  for (std::size_t free = 0; free < n; ++free)
    for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
      double sw = 0.0, obj = 0.0;
      std::size_t bit = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i == free)
          continue;
        double w = (mask >> bit++) & 1u ? gamma : inv;
        sw += w;
        obj += w * v[i];
      }
      double wf = nd - sw;
      if (wf < inv - 1e-12 || wf > gamma + 1e-12)
        continue;
      obj = (obj + wf * v[free]) / nd;
      best = dir == Direction::min ? std::min(best, obj) : std::max(best, obj);
    }
  return best;
}

}  // namespace rap
