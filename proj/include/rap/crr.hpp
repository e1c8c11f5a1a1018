#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core_data.hpp"
#include "errors.hpp"
#include "mobility.hpp"
#include "parallel.hpp"
#include "stat_engine.hpp"

namespace rap {

constexpr double kRaceClamp = 1e-10;

//! logistic fit on the non-constant columns of a design (column 0 always kept)
struct MaskedFit {
  GlmFit fit;
  std::vector<Eigen::Index> cols;

  double eta(const Eigen::RowVectorXd& full) const
  {
    double e = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k)
      e += fit.coef(static_cast<Eigen::Index>(k)) * full(cols[k]);
    return e;
  }
  double prob(const Eigen::RowVectorXd& full) const { return clamp_prob(sigmoid(eta(full))); }
};

inline MaskedFit fit_masked(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& w)
{
  MaskedFit mf;
  Eigen::Index first = -1;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (w(i) > 0) {
      first = i;
      break;
    }
  if (first < 0)
    throw AllZeroWeights("no rows with positive weight");
  mf.cols.push_back(0);
  for (Eigen::Index j = 1; j < X.cols(); ++j) {
    bool varies = false;
    for (Eigen::Index i = 0; i < X.rows() && !varies; ++i)
      varies = w(i) > 0 && X(i, j) != X(first, j);
    if (varies)
      mf.cols.push_back(j);
  }
  Eigen::MatrixXd S(X.rows(), static_cast<Eigen::Index>(mf.cols.size()));
  for (std::size_t k = 0; k < mf.cols.size(); ++k)
    S.col(static_cast<Eigen::Index>(k)) = X.col(mf.cols[k]);
  mf.fit = fit_logistic_grouped(S, y, w);
  return mf;
}

enum class CrrScope { precinct, pooled, citywide };

struct CrrModels {
  Encoder enc;
  int q = 0;
  bool precinct_effects = false;
  bool stratified = false;
  MaskedFit outcome, outcome_d0, outcome_d1, race;
  int precinct = -1;  // dummy switched on when precinct_effects
  double pd = 0.5;     // P(D=1) in the population
  double pd_m1 = 0.5;  // P(D=1 | M=1)
};

namespace detail {

inline Eigen::Index effect_width(const CrrModels& m)
{
  return m.precinct_effects ? m.q - 1 : 0;
}

inline void put_effects(const CrrModels& m, int precinct, Eigen::RowVectorXd& row, Eigen::Index at)
{
  for (Eigen::Index k = 0; k < effect_width(m); ++k)
    row(at + k) = (precinct == k + 1) ? 1.0 : 0.0;
}

inline Eigen::RowVectorXd outcome_row(const CrrModels& m, const Eigen::RowVectorXd& xenc, int d,
                                      int precinct)
{
  Eigen::Index p = xenc.size();
  Eigen::Index extra = m.stratified ? 0 : 1;
  Eigen::RowVectorXd row(p + extra + effect_width(m));
  row.head(p) = xenc;
  if (!m.stratified)
    row(p) = d;
  put_effects(m, precinct, row, p + extra);
  return row;
}

inline Eigen::RowVectorXd race_row(const CrrModels& m, const Eigen::RowVectorXd& xenc, int precinct)
{
  Eigen::Index p = xenc.size();
  Eigen::RowVectorXd row(p + effect_width(m));
  row.head(p) = xenc;
  put_effects(m, precinct, row, p);
  return row;
}

}  // namespace detail

//! P(D=d | X=x) = P(D=d | x, M=1) P(D=d) / P(D=d | M=1), clamped
inline double race_ratio_adjust(double pdx_m1, double pd, double pd_m1, bool* clamped = nullptr)
{
  double v = pdx_m1 * pd / pd_m1;
  double c = std::clamp(v, kRaceClamp, 1.0 - kRaceClamp);
  if (clamped)
    *clamped = (c != v);
  return c;
}

//! Fits outcome and race models on the selected administrative rows.
inline CrrModels fit_crr_models(const EncounterTable& admin, const Encoder& enc,
                                const std::vector<std::size_t>& rows, const Eigen::VectorXd& w,
                                bool precinct_effects, bool stratified)
{
  CrrModels m;
  m.enc = enc;
  m.q = admin.q;
  m.precinct_effects = precinct_effects;
  m.stratified = stratified;
  auto nr = static_cast<Eigen::Index>(rows.size());
  Eigen::Index p = enc.width();
  Eigen::Index ew = detail::effect_width(m);
  Eigen::MatrixXd Xo(nr, p + (stratified ? 0 : 1) + ew), Xr(nr, p + ew);
  Eigen::VectorXd y(nr), d(nr), w1(nr), w0(nr);
  Eigen::RowVectorXd xe(p);
  double sd = 0.0, sw = 0.0;
  for (Eigen::Index k = 0; k < nr; ++k) {
    std::size_t i = rows[static_cast<std::size_t>(k)];
    enc.encode_row(admin.x.row(static_cast<Eigen::Index>(i)), xe.data());
    Xo.row(k) = detail::outcome_row(m, xe, admin.d[i], admin.precinct[i]);
    Xr.row(k) = detail::race_row(m, xe, admin.precinct[i]);
    y(k) = admin.y[i];
    d(k) = admin.d[i];
    w1(k) = admin.d[i] == 1 ? w(k) : 0.0;
    w0(k) = admin.d[i] == 0 ? w(k) : 0.0;
    sd += w(k) * d(k);
    sw += w(k);
  }
  if (stratified) {
    m.outcome_d1 = fit_masked(Xo, y, w1);
    m.outcome_d0 = fit_masked(Xo, y, w0);
  } else {
    m.outcome = fit_masked(Xo, y, w);
  }
  m.race = fit_masked(Xr, d, w);
  m.pd_m1 = sd / sw;
  return m;
}

inline double outcome_prob(const CrrModels& m, const Eigen::RowVectorXd& xenc, int d)
{
  auto row = detail::outcome_row(m, xenc, d, m.precinct);
  if (m.stratified)
    return (d == 1 ? m.outcome_d1 : m.outcome_d0).prob(row);
  return m.outcome.prob(row);
}

//! E(Y | M=1, D=1, x) / E(Y | M=1, D=0, x)
inline double crr_naive(const CrrModels& m, const Eigen::RowVectorXd& xraw)
{
  auto xe = m.enc.row(xraw);
  double e1 = outcome_prob(m, xe, 1), e0 = outcome_prob(m, xe, 0);
  if (e0 < kRaceClamp)
    throw DegenerateDenominator("E(Y | M=1, D=0, x) below 1e-10");
  return e1 / e0;
}

inline double crr_conditional(const CrrModels& m, const Eigen::RowVectorXd& xraw)
{
  auto xe = m.enc.row(xraw);
  double e1 = outcome_prob(m, xe, 1), e0 = outcome_prob(m, xe, 0);
  double p1m = m.race.prob(detail::race_row(m, xe, m.precinct));
  double p0m = 1.0 - p1m;
  double p1 = race_ratio_adjust(p1m, m.pd, m.pd_m1);
  double p0 = 1.0 - p1;
  if (e0 < kRaceClamp || p0m < kRaceClamp || p1 < kRaceClamp)
    throw DegenerateDenominator("CRR denominator below 1e-10");
  return (e1 / e0) * (p1m / p0m) * (p0 / p1);
}

//! mean of crr_conditional (or crr_naive) over the given rows, weighted
inline double crr_marginal(const CrrModels& m, const EncounterTable& admin,
                           const std::vector<std::size_t>& rows, const Eigen::VectorXd& w,
                           bool naive = false)
{
  std::map<std::vector<double>, double> groups;
  std::vector<double> key(static_cast<std::size_t>(admin.x.cols()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (w(static_cast<Eigen::Index>(k)) == 0.0)
      continue;
    for (Eigen::Index j = 0; j < admin.x.cols(); ++j)
      key[static_cast<std::size_t>(j)] = admin.x(static_cast<Eigen::Index>(rows[k]), j);
    groups[key] += w(static_cast<Eigen::Index>(k));
  }
  double s = 0.0, sw = 0.0;
  Eigen::RowVectorXd xr(admin.x.cols());
  for (const auto& [kx, wt] : groups) {
    for (std::size_t j = 0; j < kx.size(); ++j)
      xr(static_cast<Eigen::Index>(j)) = kx[j];
    s += wt * (naive ? crr_naive(m, xr) : crr_conditional(m, xr));
    sw += wt;
  }
  return s / sw;
}

struct CrrEstimate {
  int precinct = -1;  // -1 for the citywide estimate
  std::string variant;
  double value = 0.0;
  double lo = std::nan("");
  double hi = std::nan("");
};

struct CrrOptions {
  CrrScope scope = CrrScope::precinct;
  bool stratified = false;
  int min_stops = 30;
  int B = 200;
  std::uint64_t seed = 1;
  double alpha = 0.9;
  std::vector<std::string> variants{"mobility", "census", "blend", "naive"};
  std::optional<Eigen::RowVectorXd> at_x;  // conditional at x instead of marginal
  int threads = 1;
};

//! linear-interpolation percentile of finite values
inline double percentile(std::vector<double> v, double prob)
{
  v.erase(std::remove_if(v.begin(), v.end(), [](double a) { return !std::isfinite(a); }), v.end());
  if (v.empty())
    return std::nan("");
  std::sort(v.begin(), v.end());
  double pos = (static_cast<double>(v.size()) - 1.0) * prob;
  auto lo = static_cast<std::size_t>(std::floor(pos));
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= v.size())
    return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

namespace detail {

inline double variant_pd(const std::string& variant, const MobilityModel& mob,
                         const Eigen::VectorXd& blend_pi, int precinct)
{
  if (precinct < 0) {
    if (variant == "census")
      return mob.census_share();
    if (variant == "blend")
      return mob.residents.dot(blend_pi) / mob.residents.sum();
    return mob.marginal_share();
  }
  auto j = static_cast<Eigen::Index>(precinct);
  if (variant == "census")
    return mob.p(j);
  if (variant == "blend")
    return blend_pi(j);
  return mob.pi(j);
}

}  // namespace detail

//! Per-precinct (or citywide) CRR estimates for every requested variant,
//! with percentile bootstrap intervals over resampled administrative rows.
inline std::vector<CrrEstimate> estimate_crr(const EncounterTable& admin, const CovariateSchema& schema,
                                             const MobilityModel& mob, const CrrOptions& opt)
{
  Encoder enc(schema, admin.x);
  Eigen::VectorXd blend_pi =
      adjust_composition_product(blend_transition(static_cast<int>(mob.p.size()), opt.alpha), mob.p);
  bool effects = opt.scope == CrrScope::pooled;

  std::vector<int> units;
  std::vector<std::vector<std::size_t>> unit_rows;
  if (opt.scope == CrrScope::citywide) {
    units.push_back(-1);
    std::vector<std::size_t> all(admin.n());
    std::iota(all.begin(), all.end(), 0);
    unit_rows.push_back(std::move(all));
  } else {
    std::vector<std::vector<std::size_t>> by(static_cast<std::size_t>(admin.q));
    for (std::size_t i = 0; i < admin.n(); ++i)
      by[static_cast<std::size_t>(admin.precinct[i])].push_back(i);
    for (int j = 0; j < admin.q; ++j) {
      units.push_back(j);
      unit_rows.push_back(by[static_cast<std::size_t>(j)]);
    }
  }

  // one evaluation = fit on (rows, weights) then evaluate each unit
  auto evaluate = [&](const std::vector<Eigen::VectorXd>& weights, std::vector<std::vector<double>>& out) {
    out.assign(units.size(), std::vector<double>(opt.variants.size(), std::nan("")));
    std::optional<CrrModels> pooled;
    if (effects) {
      std::vector<std::size_t> all(admin.n());
      std::iota(all.begin(), all.end(), 0);
      Eigen::VectorXd wall = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(admin.n()));
      for (std::size_t u = 0; u < units.size(); ++u)
        for (std::size_t k = 0; k < unit_rows[u].size(); ++k)
          wall(static_cast<Eigen::Index>(unit_rows[u][k])) = weights[u](static_cast<Eigen::Index>(k));
      pooled = fit_crr_models(admin, enc, all, wall, true, opt.stratified);
    }
    for (std::size_t u = 0; u < units.size(); ++u) {
      const auto& rows = unit_rows[u];
      const auto& w = weights[u];
      if (w.sum() < opt.min_stops)
        continue;
      try {
        CrrModels m = effects ? *pooled : fit_crr_models(admin, enc, rows, w, false, opt.stratified);
        m.precinct = units[u];
        double sd = 0.0, sw = 0.0;
        for (std::size_t k = 0; k < rows.size(); ++k) {
          sd += w(static_cast<Eigen::Index>(k)) * admin.d[rows[k]];
          sw += w(static_cast<Eigen::Index>(k));
        }
        m.pd_m1 = sd / sw;
        for (std::size_t v = 0; v < opt.variants.size(); ++v) {
          const auto& name = opt.variants[v];
          bool naive = name == "naive";
          m.pd = detail::variant_pd(name, mob, blend_pi, units[u]);
          if (opt.at_x)
            out[u][v] = naive ? crr_naive(m, *opt.at_x) : crr_conditional(m, *opt.at_x);
          else
            out[u][v] = crr_marginal(m, admin, rows, w, naive);
        }
      } catch (const Error&) {
      }
    }
  };

  std::vector<Eigen::VectorXd> ones;
  for (const auto& r : unit_rows)
    ones.push_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(r.size())));
  std::vector<std::vector<double>> point;
  evaluate(ones, point);

  std::vector<std::vector<std::vector<double>>> boot(static_cast<std::size_t>(std::max(opt.B, 0)));
  parallel_for(boot.size(), opt.threads, [&](std::size_t b) {
    auto rng = make_rng(derive_seed(opt.seed, b));
    std::vector<Eigen::VectorXd> w;
    for (const auto& r : unit_rows) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r.size()));
      if (!r.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, r.size() - 1);
        for (std::size_t k = 0; k < r.size(); ++k)
          c(static_cast<Eigen::Index>(pick(rng))) += 1.0;
      }
      w.push_back(std::move(c));
    }
    evaluate(w, boot[b]);
  });

  std::vector<CrrEstimate> res;
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (unit_rows[u].size() < static_cast<std::size_t>(opt.min_stops))
      continue;
    for (std::size_t v = 0; v < opt.variants.size(); ++v) {
      CrrEstimate e;
      e.precinct = units[u];
      e.variant = opt.variants[v] == "blend" ? "blend(" + detail::exact(opt.alpha) + ")" : opt.variants[v];
      e.value = point[u][v];
      if (!boot.empty()) {
        std::vector<double> vals;
        for (const auto& b : boot)
          vals.push_back(b[u][v]);
        e.lo = percentile(vals, 0.025);
        e.hi = percentile(vals, 0.975);
      }
      res.push_back(e);
    }
  }
  return res;
}

}  // namespace rap
