#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core_data.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "sensitivity.hpp"
#include "stat_engine.hpp"

namespace rap {

struct R2Targets {
  double r2_y = 0.0;
  double r2_r = 0.0;
  int sign_y = 1;
  int sign_r = 1;
  double K = 1.0;
};

namespace detail {

inline double sd_pop(const Eigen::VectorXd& v)
{
  double m = v.mean();
  return std::sqrt((v.array() - m).square().mean());
}

inline Eigen::MatrixXd hcat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

inline double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
  Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

}  // namespace detail

//! x_design = [1, X]; returns the synthetic confounder
inline Eigen::VectorXd construct_confounder(const Eigen::MatrixXd& x_design, const Eigen::VectorXd& r,
                                            const Eigen::VectorXd& y, const R2Targets& t, std::uint64_t seed)
{
  const Eigen::Index n = x_design.rows();
  if (r.size() != n || y.size() != n)
    throw DimensionMismatch("confounder inputs differ in length");
  if (n <= x_design.cols() + 3)
    throw InsufficientData("too few rows to construct a confounder");
  if (!(t.r2_y >= 0 && t.r2_y < 1) || !(t.r2_r >= 0 && t.r2_r < 1))
    throw TargetOutOfRange("partial R2 targets must lie in [0, 1)");
  double c = (t.sign_y < 0 ? -1.0 : 1.0) * std::sqrt(t.r2_y);
  double a = (t.sign_r < 0 ? -1.0 : 1.0) * std::sqrt(t.r2_r);

  Eigen::MatrixXd XR = detail::hcat(x_design, r);
  Eigen::VectorXd eY = ols_residuals(XR, y);
  double sY = detail::sd_pop(eY);
  if (!(sY > 0))
    throw RankDeficient("outcome has no residual variation");
  Eigen::VectorXd et = eY / sY;

  auto rng = make_rng(seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i)
    z(i) = nd(rng);
  z = ols_residuals(detail::hcat(XR, eY), z);
  z /= detail::sd_pop(z);

  Eigen::VectorXd up = c * et + std::sqrt(1.0 - c * c) * z;
  Eigen::VectorXd eR = ols_residuals(x_design, r);
  double sR = detail::sd_pop(eR);
  if (!(sR > 0))
    throw RankDeficient("place value has no residual variation given X");
  double alpha = a / std::sqrt(1.0 - a * a) * detail::sd_pop(up) / sR;
  return up + alpha * eR;
}

//! 1 - SSR(y | controls, cols) / SSR(y | controls); controls include the intercept
inline double partial_r2(const Eigen::VectorXd& y, const Eigen::MatrixXd& cols, const Eigen::MatrixXd& controls)
{
  Eigen::VectorXd red = ols_residuals(controls, y);
  Eigen::VectorXd full = ols_residuals(detail::hcat(controls, cols), y);
  double s = red.squaredNorm();
  if (!(s > 0))
    return 0.0;
  return std::max(0.0, 1.0 - full.squaredNorm() / s);
}

//! (Corr^2(y|(R,X), u|(R,X)), Corr^2(R|X, u|X))
inline std::pair<double, double> achieved_r2(const Eigen::MatrixXd& x_design, const Eigen::VectorXd& r,
                                             const Eigen::VectorXd& y, const Eigen::VectorXd& u)
{
  Eigen::MatrixXd XR = detail::hcat(x_design, r);
  double cy = detail::corr(ols_residuals(XR, y), ols_residuals(XR, u));
  double cr = detail::corr(ols_residuals(x_design, r), ols_residuals(x_design, u));
  return {cy * cy, cr * cr};
}

//! encoded column range [first, first+count) of schema column j (intercept at 0)
inline std::pair<Eigen::Index, Eigen::Index> encoded_span(const CovariateSchema& schema, std::size_t j)
{
  Eigen::Index at = 1;
  for (std::size_t k = 0; k < schema.size(); ++k) {
    const auto& c = schema.columns[k];
    Eigen::Index w = c.kind == ColumnKind::categorical ? static_cast<Eigen::Index>(c.levels.size()) - 1 : 1;
    if (k == j)
      return {at, w};
    at += w;
  }
  throw Error("covariate index out of range");
}

inline Eigen::MatrixXd drop_cols(const Eigen::MatrixXd& m, Eigen::Index first, Eigen::Index count)
{
  Eigen::MatrixXd out(m.rows(), m.cols() - count);
  out << m.leftCols(first), m.rightCols(m.cols() - first - count);
  return out;
}

struct BenchmarkRow {
  std::string covariate;
  double K = 1.0;
  int sign_y = 1, sign_r = 1;
  double r2_y = 0.0, r2_r = 0.0;
  double achieved_r2_y = 0.0, achieved_r2_r = 0.0;
  double mean_xi = 1.0, sd_xi = 0.0;
  double bias = 0.0;
  bool selected = false;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  double base_r2_y = 0.0, base_r2_r = 0.0;  // unscaled partial R2 of the left-out covariate
  XiSample informal;
  double k_m = std::nan(""), k_v = std::nan("");
  double mean_psi = 1.0, sd_psi = 0.0;
};

//! outcome-ratio moments of the reduced model, used as (E Psi, sd Psi) by default
inline std::pair<double, double> outcome_ratio_moments(const OutcomeRows& o, double r, double r0)
{
  Eigen::MatrixXd red(o.base.rows(), o.base.cols() + 1);
  red << o.base.col(0), o.r, o.base.rightCols(o.base.cols() - 1);
  GlmFit f = fit_logistic(red, o.y);
  Eigen::VectorXd l = red * f.coef - o.r * f.coef(1);
  Eigen::VectorXd v(o.r.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = sigmoid(l(i) + f.coef(1) * r) / sigmoid(l(i) + f.coef(1) * r0);
  auto s = summarize_xi(v);
  return {s.mean, s.sd};
}

//! X_j plays the confounder: full model with X_j, reduced without
inline XiSample informal_benchmark(const OutcomeRows& o, const CovariateSchema& schema, std::size_t j, double r,
                                   double r0)
{
  auto [first, count] = encoded_span(schema, j);
  Eigen::MatrixXd base = drop_cols(o.base, first, count);
  return xi_outcome_ratio(base, o.r, o.y, o.base.middleCols(first, count), r, r0);
}

//! partial R2 of X_j scaled by K, synthetic confounders for the four sign combinations
inline BenchmarkReport formal_benchmark(const OutcomeRows& o, const CovariateSchema& schema, std::size_t j,
                                        double K, double r, double r0, std::uint64_t seed,
                                        std::optional<std::pair<double, double>> psi_moments = std::nullopt)
{
  if (K < 0)
    throw Error("K must be non-negative");
  auto [first, count] = encoded_span(schema, j);
  Eigen::MatrixXd xj = o.base.middleCols(first, count);
  Eigen::MatrixXd rest = drop_cols(o.base, first, count);
  BenchmarkReport rep;
  rep.base_r2_y = partial_r2(o.y, xj, detail::hcat(rest, o.r));
  rep.base_r2_r = partial_r2(o.r, xj, rest);
  auto mom = psi_moments ? *psi_moments : outcome_ratio_moments(o, r, r0);
  rep.mean_psi = mom.first;
  rep.sd_psi = mom.second;

  double best = -1.0;
  std::size_t pick = 0;
  for (int sy : {1, -1})
    for (int sr : {1, -1}) {
      R2Targets t{K * rep.base_r2_y, K * rep.base_r2_r, sy, sr, K};
      Eigen::VectorXd u = construct_confounder(o.base, o.r, o.y, t, seed);
      auto ach = achieved_r2(o.base, o.r, o.y, u);
      auto xi = xi_outcome_ratio(o.base, o.r, o.y, u, r, r0);
      BenchmarkRow row;
      row.covariate = schema.columns[j].name;
      row.K = K;
      row.sign_y = sy;
      row.sign_r = sr;
      row.r2_y = t.r2_y;
      row.r2_r = t.r2_r;
      row.achieved_r2_y = ach.first;
      row.achieved_r2_r = ach.second;
      row.mean_xi = xi.mean;
      row.sd_xi = xi.sd;
      row.bias = bias_bound(mom.first, mom.second, {xi.mean, xi.sd, std::nullopt});
      if (std::abs(row.bias) > best) {
        best = std::abs(row.bias);
        pick = rep.rows.size();
      }
      rep.rows.push_back(row);
    }
  rep.rows[pick].selected = true;
  rep.informal = informal_benchmark(o, schema, j, r, r0);
  const auto& s = rep.rows[pick];
  if (rep.informal.mean != 1.0)
    rep.k_m = (s.mean_xi - 1.0) / (rep.informal.mean - 1.0);
  if (rep.informal.sd > 0)
    rep.k_v = s.sd_xi / rep.informal.sd;
  return rep;
}

}  // namespace rap
