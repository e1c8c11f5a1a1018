#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "benchmark.hpp"
#include "core_data.hpp"
#include "crr.hpp"
#include "errors.hpp"
#include "mobility.hpp"
#include "parallel.hpp"
#include "race_place.hpp"
#include "sensitivity.hpp"
#include "stat_engine.hpp"

namespace rap {

struct DgpSpec {
  std::string name = "scenario1";  // scenario1 scenario2 interp_confounding interp_ratio benchmark_appH monotone
  std::size_t n = 100000;
  int q = 35;
  std::uint64_t seed = 1;
  double a = 0.0;
  std::vector<int> signs{1, 1, 1, 1};
  int slope_sign = 1;  // monotone: +1 gives a stop probability decreasing in r
};

//! potential outcomes, kept apart from the estimation table
struct SimTruth {
  std::vector<int> y1, y0, m1, m0;
};

struct SimData {
  EncounterTable table;
  SimTruth truth;
  CovariateSchema schema;
  Eigen::VectorXd population, share;  // per precinct, full population

  MobilityModel mobility() const { return MobilityModel::stay_home(population, share); }
};

inline double normal_pdf(double z)
{
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

namespace detail {

inline int sign_at(const DgpSpec& s, std::size_t k)
{
  return k < s.signs.size() && s.signs[k] < 0 ? -1 : 1;
}

inline CovariateSchema level_schema()
{
  return CovariateSchema::categorical("x", {"1", "2", "3", "4"});
}

inline void finish_population(SimData& s)
{
  auto& t = s.table;
  s.population = Eigen::VectorXd::Zero(t.q);
  Eigen::VectorXd black = Eigen::VectorXd::Zero(t.q);
  for (std::size_t i = 0; i < t.precinct.size(); ++i) {
    s.population(t.precinct[i]) += 1.0;
    black(t.precinct[i]) += t.d[i];
  }
  s.share = Eigen::VectorXd::Zero(t.q);
  for (int j = 0; j < t.q; ++j)
    s.share(j) = s.population(j) > 0 ? black(j) / s.population(j) : 0.0;
}

//! scenario 1, scenario 2 and the monotone variant share the precinct design
inline SimData generate_precinct(const DgpSpec& spec, bool confounded, bool monotone)
{
  auto rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> prec(1, spec.q), lev(1, 4);
  const std::size_t n = spec.n;
  SimData s;
  s.schema = level_schema();
  auto& t = s.table;
  t.q = spec.q;
  t.x.resize(static_cast<Eigen::Index>(n), 1);
  t.precinct.resize(n);
  t.d.resize(n);
  std::vector<int> xs(n);
  std::vector<double> us(n, 1.0);
  if (confounded)
    t.u.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    int qi = prec(rng);
    xs[i] = lev(rng);
    double u = confounded ? unif(rng) : 0.0;
    double pd = sigmoid(2.0 * qi / spec.q - 1.0 + u);
    t.d[i] = unif(rng) < pd ? 1 : 0;
    t.precinct[i] = qi - 1;
    t.x(static_cast<Eigen::Index>(i), 0) = xs[i] - 1;
    if (confounded) {
      us[i] = u;
      (*t.u)[i] = u;
    }
  }
  finish_population(s);
  t.r.emplace(n);
  t.y.resize(n);
  t.m.resize(n);
  s.truth.y1.resize(n);
  s.truth.y0.resize(n);
  s.truth.m1.resize(n);
  s.truth.m0.resize(n);
  double slope = 2.0 * spec.slope_sign;
  for (std::size_t i = 0; i < n; ++i) {
    double r = s.share(t.precinct[i]);
    (*t.r)[i] = r;
    double x = xs[i];
    double pm = monotone ? sigmoid(x - 2.5 - slope * (r - 0.5)) : sigmoid(x - 2.5);
    double py = sigmoid(x - 0.5 - 2.0 * r) * us[i];
    int m1 = unif(rng) < pm, m0 = unif(rng) < pm;
    int y1s = unif(rng) < py, y0s = unif(rng) < py;
    s.truth.m1[i] = m1;
    s.truth.m0[i] = m0;
    s.truth.y1[i] = m1 * y1s;
    s.truth.y0[i] = m0 * y0s;
    t.m[i] = t.d[i] ? m1 : m0;
    t.y[i] = t.d[i] ? s.truth.y1[i] : s.truth.y0[i];
  }
  return s;
}

inline void single_precinct(SimData& s, std::size_t n)
{
  s.table.q = 1;
  s.table.precinct.assign(n, 0);
  finish_population(s);
}

//! min and max of R' before the rescale into [0.1, ~0.93]
struct Rescale {
  double lo = 0.0, hi = 1.0;
  double to_r(double rp) const { return 0.1 + (rp - lo) / (1.2 * (hi - lo)); }
  double to_raw(double r) const { return lo + (r - 0.1) * 1.2 * (hi - lo); }
};

}  // namespace detail

//! binary-U confounding process; also returns the rescale used for R
inline SimData generate_interp_confounding(const DgpSpec& spec, detail::Rescale* rescale = nullptr)
{
  auto rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm;
  const std::size_t n = spec.n;
  const double a = spec.a;
  double a1 = detail::sign_at(spec, 0), a2 = detail::sign_at(spec, 1), a3 = detail::sign_at(spec, 2),
         a4 = detail::sign_at(spec, 3);
  SimData s;
  s.schema = CovariateSchema::continuous({"x"});
  auto& t = s.table;
  t.x.resize(static_cast<Eigen::Index>(n), 1);
  t.u.emplace(n);
  t.r.emplace(n);
  std::vector<double> rp(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = unif(rng) < 0.5 ? 1.0 : 0.0;
    double x = norm(rng);
    rp[i] = a1 * a * u + x + norm(rng);
    (*t.u)[i] = u;
    t.x(static_cast<Eigen::Index>(i), 0) = x;
  }
  detail::Rescale rs{*std::min_element(rp.begin(), rp.end()), *std::max_element(rp.begin(), rp.end())};
  if (rescale)
    *rescale = rs;
  t.y.resize(n);
  t.m.resize(n);
  t.d.resize(n);
  auto& tr = s.truth;
  tr.y1.resize(n);
  tr.y0.resize(n);
  tr.m1.resize(n);
  tr.m0.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = (*t.u)[i], x = t.x(static_cast<Eigen::Index>(i), 0), r = rs.to_r(rp[i]);
    (*t.r)[i] = r;
    t.d[i] = unif(rng) < sigmoid(a2 * a * u + x);
    for (int dd : {1, 0}) {
      int m = unif(rng) < sigmoid(a3 * a * u + x + 0.5 * dd + r + r * x);
      int y = unif(rng) < sigmoid(-0.6 + a4 * a * u + r + 0.5 * x + 0.5 + 0.5 * dd + r * x);
      (dd ? tr.m1 : tr.m0)[i] = m;
      (dd ? tr.y1 : tr.y0)[i] = m * y;
    }
    t.m[i] = t.d[i] ? tr.m1[i] : tr.m0[i];
    t.y[i] = t.d[i] ? tr.y1[i] : tr.y0[i];
  }
  detail::single_precinct(s, n);
  return s;
}

//! interaction process violating the density-ratio condition
inline SimData generate_interp_ratio(const DgpSpec& spec)
{
  auto rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm;
  const std::size_t n = spec.n;
  const double a = spec.a;
  double a1 = detail::sign_at(spec, 0), a2 = detail::sign_at(spec, 1), a3 = detail::sign_at(spec, 2);
  SimData s;
  s.schema = CovariateSchema::continuous({"x"});
  auto& t = s.table;
  t.x.resize(static_cast<Eigen::Index>(n), 1);
  t.r.emplace(n);
  t.y.resize(n);
  t.m.resize(n);
  t.d.resize(n);
  auto& tr = s.truth;
  tr.y1.resize(n);
  tr.y0.resize(n);
  tr.m1.resize(n);
  tr.m0.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = norm(rng);
    double r = -0.5 * x + norm(rng);
    t.x(static_cast<Eigen::Index>(i), 0) = x;
    (*t.r)[i] = r;
    t.d[i] = unif(rng) < sigmoid(0.3 * x - 0.3 * r);
    for (int dd : {1, 0}) {
      int m = unif(rng) < sigmoid(0.3 * x - 0.3 * r + 0.3 * dd + a1 * a * dd * x + a2 * a * r * x);
      int y = unif(rng) < sigmoid(-0.6 + 0.5 * r - 0.5 * x + 0.5 + 0.5 * dd + a3 * a * r * x);
      (dd ? tr.m1 : tr.m0)[i] = m;
      (dd ? tr.y1 : tr.y0)[i] = m * y;
    }
    t.m[i] = t.d[i] ? tr.m1[i] : tr.m0[i];
    t.y[i] = t.d[i] ? tr.y1[i] : tr.y0[i];
  }
  detail::single_precinct(s, n);
  return s;
}

//! twin observed/unobserved covariates
inline SimData generate_twin(const DgpSpec& spec)
{
  auto rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm;
  const std::size_t n = spec.n;
  SimData s;
  s.schema = CovariateSchema::continuous({"x"});
  auto& t = s.table;
  t.x.resize(static_cast<Eigen::Index>(n), 1);
  t.u.emplace(n);
  t.r.emplace(n);
  t.y.resize(n);
  t.m.resize(n);
  t.d.resize(n);
  auto& tr = s.truth;
  tr.y1.resize(n);
  tr.y0.resize(n);
  tr.m1.resize(n);
  tr.m0.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = norm(rng), u = norm(rng);
    double r = x + u + norm(rng);
    t.x(static_cast<Eigen::Index>(i), 0) = x;
    (*t.u)[i] = u;
    (*t.r)[i] = r;
    t.d[i] = unif(rng) < sigmoid(x + u + 0.5 * r);
    for (int dd : {1, 0}) {
      int m = unif(rng) < sigmoid(x + u + 0.5 * r + 0.5 * dd);
      int y = unif(rng) < sigmoid(x - u + 0.5 * r + 0.5 * dd + 0.5);
      (dd ? tr.m1 : tr.m0)[i] = m;
      (dd ? tr.y1 : tr.y0)[i] = m * y;
    }
    t.m[i] = t.d[i] ? tr.m1[i] : tr.m0[i];
    t.y[i] = t.d[i] ? tr.y1[i] : tr.y0[i];
  }
  detail::single_precinct(s, n);
  return s;
}

inline SimData generate(const DgpSpec& spec)
{
  if (spec.n < static_cast<std::size_t>(std::max(spec.q, 1)) || spec.q < 1)
    throw Error("need n >= q >= 1");
  if (spec.name == "scenario1")
    return detail::generate_precinct(spec, false, false);
  if (spec.name == "scenario2")
    return detail::generate_precinct(spec, true, false);
  if (spec.name == "monotone")
    return detail::generate_precinct(spec, false, true);
  if (spec.name == "interp_confounding") {
    if (spec.a < 0 || spec.a > 1)
      throw Error("strength a must lie in [0, 1]");
    return generate_interp_confounding(spec);
  }
  if (spec.name == "interp_ratio") {
    if (spec.a < 0 || spec.a > 0.5)
      throw Error("strength a must lie in [0, 0.5]");
    return generate_interp_ratio(spec);
  }
  if (spec.name == "benchmark_appH")
    return generate_twin(spec);
  throw Error("unknown process " + spec.name);
}

// ---------------------------------------------------------------- closed-form truths

inline double psi_truth(int x, double r, double r0)
{
  return sigmoid(x - 0.5 - 2.0 * r) / sigmoid(x - 0.5 - 2.0 * r0);
}

inline double psi_truth_monotone(int x, double r, double r0, int slope_sign)
{
  double s = 2.0 * slope_sign;
  auto f = [&](double v) { return sigmoid(x - 2.5 - s * (v - 0.5)) * sigmoid(x - 0.5 - 2.0 * v); };
  return f(r) / f(r0);
}

//! stopped-row share of each level, used to marginalize the truth
inline std::array<double, 4> stopped_level_shares(const EncounterTable& admin)
{
  std::array<double, 4> w{0, 0, 0, 0};
  double tot = 0.0;
  for (std::size_t i = 0; i < admin.n(); ++i)
    if (admin.m[i] == 1) {
      w[static_cast<std::size_t>(admin.x(static_cast<Eigen::Index>(i), 0))] += 1.0;
      tot += 1.0;
    }
  for (auto& v : w)
    v /= tot;
  return w;
}

// ---------------------------------------------------------------- study

struct MetricsReport {
  std::string estimand;
  double avg_pct_bias = 0.0;     // mean over replicates of mean |est - truth| / truth
  double signed_pct_bias = 0.0;  // |mean est - mean truth| / mean truth, averaged over grid
  double mse = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<double> per_rep_pct_bias, per_rep_sq_err;
  std::vector<std::size_t> per_rep_index;
};

struct RepRecord {
  std::size_t rep = 0;
  std::string estimand;
  double r = std::nan("");
  double estimate = std::nan("");
  double truth = std::nan("");
};

struct StudyOptions {
  int scenario = 1;
  std::size_t reps = 100;
  std::size_t n = 100000;
  int q = 35;
  std::uint64_t seed = 1;
  int x_eval = 2;     // level for the conditional curve
  int crr_x = 4;      // level for the citywide CRR
  RapOptions rap;
  int threads = 1;
};

struct StudyResult {
  std::vector<RepRecord> records;
  std::vector<MetricsReport> metrics;
  std::vector<double> grid;  // points present in every replicate
};

namespace detail {

struct RepOut {
  bool ok = false;
  std::vector<double> grid, marg, marg_truth, cond, cond_truth;
  double crr = std::nan("");
};

inline RepOut study_rep(const StudyOptions& o, std::size_t rep)
{
  RepOut out;
  DgpSpec spec;
  spec.name = o.scenario == 2 ? "scenario2" : "scenario1";
  spec.n = o.n;
  spec.q = o.q;
  spec.seed = derive_seed(o.seed, rep);
  SimData sim = generate(spec);
  EncounterTable admin = sim.table.stopped();
  admin.u.reset();
  MobilityModel mob = sim.mobility();
  try {
    RapData data = prepare_rap_data(admin, mob);
    RapOptions ro = o.rap;
    ro.density = DensityMode::kde;
    RapModels m = fit_rap_models(data, sim.schema, ro);
    out.grid = clip_grid(ro.grid, m);
    auto rows = marginal_rows(data.n(), ro.cap, derive_seed(spec.seed, 7));
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.n()));
    out.marg = psi_marginal(m, out.grid, ro.r0, data, rows, ones).est;
    auto w = stopped_level_shares(admin);
    Eigen::RowVectorXd xr(1);
    xr(0) = o.x_eval - 1;
    for (double r : out.grid) {
      double t = 0.0;
      for (int k = 1; k <= 4; ++k)
        t += w[static_cast<std::size_t>(k - 1)] * psi_truth(k, r, ro.r0);
      out.marg_truth.push_back(t);
      out.cond.push_back(psi_conditional(m, r, ro.r0, xr));
      out.cond_truth.push_back(psi_truth(o.x_eval, r, ro.r0));
    }
    CrrOptions co;
    co.scope = CrrScope::citywide;
    co.variants = {"mobility"};
    co.B = 0;
    co.min_stops = 0;
    Eigen::RowVectorXd cx(1);
    cx(0) = o.crr_x - 1;
    co.at_x = cx;
    auto est = estimate_crr(admin, sim.schema, mob, co);
    out.crr = est.at(0).value;
    out.ok = std::isfinite(out.crr);
  } catch (const Error&) {
    out.ok = false;
  }
  return out;
}

}  // namespace detail

inline MetricsReport summarize_metrics(const std::string& tag, const std::vector<std::vector<double>>& est,
                                       const std::vector<std::vector<double>>& truth, std::size_t failures)
{
  MetricsReport mr;
  mr.estimand = tag;
  mr.reps = est.size();
  mr.failures = failures;
  if (est.empty())
    return mr;
  std::size_t G = est[0].size();
  std::vector<double> me(G, 0.0), mt(G, 0.0);
  for (std::size_t k = 0; k < est.size(); ++k) {
    double pb = 0.0, se = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      pb += std::abs(est[k][g] - truth[k][g]) / truth[k][g] * 100.0;
      se += (est[k][g] - truth[k][g]) * (est[k][g] - truth[k][g]);
      me[g] += est[k][g];
      mt[g] += truth[k][g];
    }
    mr.per_rep_pct_bias.push_back(pb / G);
    mr.per_rep_sq_err.push_back(se / G);
  }
  double n = static_cast<double>(est.size());
  for (double v : mr.per_rep_pct_bias)
    mr.avg_pct_bias += v;
  mr.avg_pct_bias /= n;
  for (double v : mr.per_rep_sq_err)
    mr.mse += v;
  mr.mse /= n;
  for (std::size_t g = 0; g < G; ++g)
    mr.signed_pct_bias += std::abs(me[g] / n - mt[g] / n) / (mt[g] / n) * 100.0 / G;
  return mr;
}

inline StudyResult run_study(const StudyOptions& o)
{
  if (o.reps < 1)
    throw Error("need at least one replicate");
  std::vector<detail::RepOut> outs(o.reps);
  parallel_for(o.reps, o.threads, [&](std::size_t k) { outs[k] = detail::study_rep(o, k); });

  StudyResult res;
  std::vector<double> common;
  bool first = true;
  std::size_t failures = 0;
  for (const auto& r : outs) {
    if (!r.ok) {
      ++failures;
      continue;
    }
    if (first) {
      common = r.grid;
      first = false;
    } else {
      std::vector<double> keep;
      std::set_intersection(common.begin(), common.end(), r.grid.begin(), r.grid.end(), std::back_inserter(keep));
      common = keep;
    }
  }
  res.grid = common;

  std::vector<std::vector<double>> me, mt, ce, ct, re, rt;
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    const auto& r = outs[k];
    if (!r.ok)
      continue;
    kept.push_back(k);
    std::vector<double> a, b, c, d;
    for (std::size_t g = 0; g < r.grid.size(); ++g) {
      res.records.push_back({k, "psi_marginal", r.grid[g], r.marg[g], r.marg_truth[g]});
      res.records.push_back({k, "psi_conditional", r.grid[g], r.cond[g], r.cond_truth[g]});
      if (!std::binary_search(common.begin(), common.end(), r.grid[g]) || r.grid[g] == o.rap.r0)
        continue;
      a.push_back(r.marg[g]);
      b.push_back(r.marg_truth[g]);
      c.push_back(r.cond[g]);
      d.push_back(r.cond_truth[g]);
    }
    res.records.push_back({k, "crr", std::nan(""), r.crr, 1.0});
    me.push_back(a);
    mt.push_back(b);
    ce.push_back(c);
    ct.push_back(d);
    re.push_back({r.crr});
    rt.push_back({1.0});
  }
  res.metrics.push_back(summarize_metrics("psi_marginal", me, mt, failures));
  res.metrics.push_back(summarize_metrics("psi_conditional", ce, ct, failures));
  res.metrics.push_back(summarize_metrics("crr", re, rt, failures));
  for (auto& m : res.metrics)
    m.per_rep_index = kept;
  return res;
}

// ---------------------------------------------------------------- interpretability

struct SweepRow {
  std::string dgp;
  double a = 0.0;
  double mean_dev = 0.0, sd = 0.0;              // xi
  double mean_dev_tilde = std::nan(""), sd_tilde = std::nan("");  // xi-tilde
};

struct SweepOptions {
  std::string dgp = "interp_confounding";
  std::vector<double> a_grid;
  std::size_t n = 500000;
  std::uint64_t seed = 1;
  int threads = 1;
};

namespace detail {

inline std::vector<std::vector<int>> sign_combos(int k)
{
  std::vector<std::vector<int>> out;
  for (int mask = 0; mask < (1 << k); ++mask) {
    std::vector<int> s;
    for (int b = 0; b < k; ++b)
      s.push_back((mask >> b) & 1 ? -1 : 1);
    out.push_back(s);
  }
  return out;
}

inline std::pair<double, double> quartiles(std::vector<double> v)
{
  Eigen::VectorXd e = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  Tally t = tally(e, Eigen::VectorXd::Ones(e.size()));
  return {weighted_quantile(t, 0.25), weighted_quantile(t, 0.75)};
}

inline std::pair<double, double> moments(const std::vector<double>& v)
{
  double m = 0.0, s = 0.0;
  for (double x : v)
    m += x;
  m /= static_cast<double>(v.size());
  for (double x : v)
    s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

//! confounding process: xi from the analytic U-mixture, xi-tilde per (x, u)
inline std::array<double, 4> confounding_params(const DgpSpec& spec)
{
  detail::Rescale rs;
  SimData s = generate_interp_confounding(spec, &rs);
  const auto& t = s.table;
  auto [r, r0] = quartiles(*t.r);
  double a = spec.a;
  double a1 = sign_at(spec, 0), a2 = sign_at(spec, 1), a3 = sign_at(spec, 2), a4 = sign_at(spec, 3);
  auto pm = [&](double u, double x, double rv) { return sigmoid(a3 * a * u + x + 0.5 + rv + rv * x); };
  auto py = [&](double u, double x, double rv) { return sigmoid(-0.6 + a4 * a * u + rv + 0.5 * x + 1.0 + rv * x); };
  auto pd = [&](double u, double x) { return sigmoid(a2 * a * u + x); };
  auto dens = [&](double u, double x, double rv) { return normal_pdf(rs.to_raw(rv) - a1 * a * u - x); };
  auto truth = [&](double x, double rv) {
    double n = 0.0, d = 0.0;
    for (double u : {0.0, 1.0}) {
      double w = dens(u, x, rv);
      n += w * pm(u, x, rv) * py(u, x, rv);
      d += w;
    }
    return n / d;
  };
  auto ident = [&](double x, double rv) {
    double n = 0.0, d = 0.0;
    for (double u : {0.0, 1.0}) {
      double w = dens(u, x, rv) * pd(u, x);
      n += w * pm(u, x, rv) * py(u, x, rv);
      d += w;
    }
    return n / d;
  };
  std::vector<double> xi, xt;
  for (std::size_t i = 0; i < t.n(); ++i) {
    if (t.m[i] != 1)
      continue;
    double x = t.x(static_cast<Eigen::Index>(i), 0), u = (*t.u)[i];
    double id = ident(x, r) / ident(x, r0);
    xi.push_back((truth(x, r) / truth(x, r0)) / id);
    xt.push_back((pm(u, x, r) * py(u, x, r)) / (pm(u, x, r0) * py(u, x, r0)) / id);
  }
  auto m1 = moments(xi), m2 = moments(xt);
  return {std::abs(m1.first - 1.0), m1.second, std::abs(m2.first - 1.0), m2.second};
}

//! ratio process: xi from the stop-probability average over x given (r, D=1)
inline std::array<double, 4> ratio_params(const DgpSpec& spec)
{
  SimData s = generate_interp_ratio(spec);
  const auto& t = s.table;
  auto [r, r0] = quartiles(*t.r);
  double a = spec.a, a1 = sign_at(spec, 0), a2 = sign_at(spec, 1);
  auto pm = [&](double x, double rv) { return sigmoid(0.3 * x - 0.3 * rv + 0.3 + a1 * a * x + a2 * a * rv * x); };
  auto avg = [&](double rv) {
    const int K = 4001;
    const double lo = -8.0, hi = 8.0, h = (hi - lo) / (K - 1);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < K; ++k) {
      double x = lo + h * k;
      double wt = (k == 0 || k == K - 1) ? 0.5 : 1.0;
      double w = wt * normal_pdf(x) * normal_pdf(rv + 0.5 * x) * sigmoid(0.3 * x - 0.3 * rv);
      num += w * pm(x, rv);
      den += w;
    }
    return num / den;
  };
  double br = avg(r), b0 = avg(r0);
  std::vector<double> xi;
  for (std::size_t i = 0; i < t.n(); ++i) {
    if (t.m[i] != 1)
      continue;
    double x = t.x(static_cast<Eigen::Index>(i), 0);
    xi.push_back((pm(x, r) / br) / (pm(x, r0) / b0));
  }
  auto m1 = moments(xi);
  return {std::abs(m1.first - 1.0), m1.second, std::nan(""), std::nan("")};
}

}  // namespace detail

//! worst case over sign combinations for each strength a
inline std::vector<SweepRow> interpretability_sweep(const SweepOptions& o)
{
  bool conf = o.dgp == "interp_confounding";
  if (!conf && o.dgp != "interp_ratio")
    throw Error("sweep needs interp_confounding or interp_ratio");
  double amax = conf ? 1.0 : 0.5;
  for (double a : o.a_grid)
    if (a < 0 || a > amax)
      throw Error("strength outside the documented range");
  auto combos = detail::sign_combos(conf ? 4 : 3);
  std::size_t C = combos.size();
  std::vector<std::array<double, 4>> cell(o.a_grid.size() * C);
  parallel_for(cell.size(), o.threads, [&](std::size_t k) {
    DgpSpec spec;
    spec.name = o.dgp;
    spec.n = o.n;
    spec.q = 1;
    spec.a = o.a_grid[k / C];
    spec.signs = combos[k % C];
    spec.seed = derive_seed(o.seed, k / C);
    cell[k] = conf ? detail::confounding_params(spec) : detail::ratio_params(spec);
  });
  std::vector<SweepRow> out;
  for (std::size_t i = 0; i < o.a_grid.size(); ++i) {
    SweepRow row;
    row.dgp = o.dgp;
    row.a = o.a_grid[i];
    for (std::size_t c = 0; c < C; ++c) {
      const auto& v = cell[i * C + c];
      row.mean_dev = std::max(row.mean_dev, v[0]);
      row.sd = std::max(row.sd, v[1]);
      if (conf) {
        row.mean_dev_tilde = c == 0 ? v[2] : std::max(row.mean_dev_tilde, v[2]);
        row.sd_tilde = c == 0 ? v[3] : std::max(row.sd_tilde, v[3]);
      }
    }
    out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------- twin-covariate benchmarking

struct BenchmarkStudy {
  XiSample truth;     // xi from the actual omitted confounder
  XiSample informal;  // X in / out
  BenchmarkReport formal;
  double r = 0.6, r0 = 0.0;
};

inline BenchmarkStudy benchmark_study(std::size_t n, std::uint64_t seed, double K = 1.0, double r = 0.6,
                                      double r0 = 0.0)
{
  DgpSpec spec;
  spec.name = "benchmark_appH";
  spec.n = n;
  spec.q = 1;
  spec.seed = seed;
  SimData s = generate(spec);
  BenchmarkStudy b;
  b.r = r;
  b.r0 = r0;
  b.truth = xi_from_confounder(s.table, s.schema, r, r0);
  auto o = outcome_rows(s.table, s.schema);
  b.informal = informal_benchmark(o, s.schema, 0, r, r0);
  b.formal = formal_benchmark(o, s.schema, 0, K, r, r0, derive_seed(seed, 99));
  return b;
}

}  // namespace rap
