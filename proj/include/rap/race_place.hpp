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
#include "crr.hpp"
#include "errors.hpp"
#include "mobility.hpp"
#include "parallel.hpp"
#include "stat_engine.hpp"

namespace rap {

constexpr double kDensityFloor = 1e-12;

enum class DensityMode { automatic, kde, beta };

inline std::vector<double> default_grid()
{
  std::vector<double> g;
  for (int k = 0; k <= 12; ++k)
    g.push_back(std::round((0.2 + 0.05 * k) * 100.0) / 100.0);
  return g;
}

//! per-precinct place value, composition and time weight
struct Geography {
  Eigen::VectorXd r, pi, C;
};

inline Geography geography_from(const MobilityModel& mob)
{
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < mob.pi.size(); ++j)
    if (std::isfinite(mob.pi(j)) && mob.C(j) > 0)
      keep.push_back(j);
  Geography g;
  auto k = static_cast<Eigen::Index>(keep.size());
  g.r.resize(k);
  g.pi.resize(k);
  g.C.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    g.r(i) = mob.pi(keep[static_cast<std::size_t>(i)]);
    g.pi(i) = mob.pi(keep[static_cast<std::size_t>(i)]);
    g.C(i) = mob.C(keep[static_cast<std::size_t>(i)]);
  }
  return g;
}

//! stopped rows with their place values
struct RapData {
  Eigen::MatrixXd x;
  Eigen::VectorXd r, y, d;
  Geography geo;
  double pd = 0.5;
  std::size_t n() const { return static_cast<std::size_t>(r.size()); }
};

inline RapData prepare_rap_data(const EncounterTable& admin, const MobilityModel& mob)
{
  RapData data;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < admin.n(); ++i)
    if (admin.m[i] == 1)
      rows.push_back(i);
  auto n = static_cast<Eigen::Index>(rows.size());
  data.x.resize(n, admin.x.cols());
  data.r.resize(n);
  data.y.resize(n);
  data.d.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    std::size_t i = rows[static_cast<std::size_t>(k)];
    data.x.row(k) = admin.x.row(static_cast<Eigen::Index>(i));
    data.r(k) = admin.r ? (*admin.r)[i] : mob.pi(admin.precinct[i]);
    if (!std::isfinite(data.r(k)))
      throw BadValue("no place value for precinct " + std::to_string(admin.precinct[i]));
    data.y(k) = admin.y[i];
    data.d(k) = admin.d[i];
  }
  data.geo = geography_from(mob);
  data.pd = mob.marginal_share();
  return data;
}

struct RapOptions {
  std::vector<double> grid = default_grid();
  double r0 = 0.6;
  DensityMode density = DensityMode::automatic;
  std::optional<double> bandwidth;
  std::size_t cap = 50000;
  std::uint64_t seed = 1;
  double margin = 0.0;  // allowed extrapolation beyond the observed place range
  int B = 200;
  int threads = 1;
};

using StratumKey = std::vector<double>;

struct RapModels {
  Encoder enc;
  GlmFit outcome, race;
  DensityMode mode = DensityMode::kde;
  KernelSpec kernel;
  std::map<StratumKey, Tally> stopped_x, black_x;
  Tally black_all;
  BetaFit beta_stopped_x, beta_black_x, beta_black_all;
  Geography geo;
  double pd = 0.5;
  double rmin = 0.0, rmax = 1.0, margin = 0.0;
};

inline DensityMode resolve_density(DensityMode m, const CovariateSchema& schema)
{
  bool all_cat = std::all_of(schema.columns.begin(), schema.columns.end(),
                             [](const CovariateColumn& c) { return c.kind == ColumnKind::categorical; });
  if (m == DensityMode::kde && !all_cat)
    throw Error("kde place densities need categorical covariates");
  if (m != DensityMode::automatic)
    return m;
  return (all_cat && schema.size() <= 1) ? DensityMode::kde : DensityMode::beta;
}

namespace detail {

inline StratumKey key_of(const Eigen::MatrixXd& x, Eigen::Index i)
{
  StratumKey k(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    k[static_cast<std::size_t>(j)] = x(i, j);
  return k;
}

inline Eigen::RowVectorXd rx_row(const RapModels& m, double r, const Eigen::RowVectorXd& xenc)
{
  Eigen::RowVectorXd row(xenc.size() + 1);
  row(0) = 1.0;
  row(1) = r;
  row.tail(xenc.size() - 1) = xenc.tail(xenc.size() - 1);
  return row;
}

inline double linear_prob(const GlmFit& f, const Eigen::RowVectorXd& row)
{
  return clamp_prob(sigmoid(row.dot(f.coef.transpose())));
}

inline double tally_kde(const Tally& t, const KernelSpec& k, double r)
{
  if (t.value.size() == 0)
    return 0.0;
  return weighted_kde(t.value, t.weight, k, r);
}

}  // namespace detail

inline RapModels fit_rap_models(const RapData& data, const CovariateSchema& schema, const RapOptions& opt,
                                const Eigen::VectorXd& w)
{
  auto n = static_cast<Eigen::Index>(data.n());
  if (n == 0)
    throw InsufficientData("no stopped rows");
  RapModels m;
  m.enc = Encoder(schema, data.x);
  m.mode = resolve_density(opt.density, schema);
  m.geo = data.geo;
  m.pd = data.pd;
  m.margin = opt.margin;
  if (!(m.pd > 0))
    throw DegenerateDenominator("P(D=1) is zero");

  Eigen::MatrixXd xe = m.enc.matrix(data.x);
  Eigen::MatrixXd Z(n, xe.cols() + 1);
  Z.col(0).setOnes();
  Z.col(1) = data.r;
  Z.rightCols(xe.cols() - 1) = xe.rightCols(xe.cols() - 1);

  Eigen::VectorXd wb = w.cwiseProduct(data.d);
  m.outcome = fit_logistic_grouped(Z, data.y, wb);
  m.race = fit_logistic_grouped(Z, data.d, w);

  m.rmin = std::numeric_limits<double>::infinity();
  m.rmax = -m.rmin;
  for (Eigen::Index i = 0; i < n; ++i)
    if (w(i) > 0) {
      m.rmin = std::min(m.rmin, data.r(i));
      m.rmax = std::max(m.rmax, data.r(i));
    }
  double h = opt.bandwidth ? *opt.bandwidth : rule_of_thumb_bandwidth(data.r, w);
  m.kernel = KernelSpec{h, 2};

  if (m.mode == DensityMode::kde) {
    std::map<StratumKey, std::vector<Eigen::Index>> strata;
    for (Eigen::Index i = 0; i < n; ++i)
      strata[detail::key_of(data.x, i)].push_back(i);
    for (const auto& [key, idx] : strata) {
      Eigen::VectorXd rv(static_cast<Eigen::Index>(idx.size())), ws(rv.size()), wd(rv.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        rv(static_cast<Eigen::Index>(k)) = data.r(idx[k]);
        ws(static_cast<Eigen::Index>(k)) = w(idx[k]);
        wd(static_cast<Eigen::Index>(k)) = wb(idx[k]);
      }
      m.stopped_x[key] = tally(rv, ws);
      m.black_x[key] = tally(rv, wd);
    }
    m.black_all = tally(data.r, wb);
  } else {
    Eigen::VectorXd rc = data.r.unaryExpr([](double v) { return clamp_unit(v); });
    m.beta_stopped_x = fit_beta_regression(xe, rc, w);
    m.beta_black_x = fit_beta_regression(xe, rc, wb);
    m.beta_black_all = fit_beta_regression(Eigen::MatrixXd::Ones(n, 1), rc, wb);
  }
  return m;
}

inline RapModels fit_rap_models(const RapData& data, const CovariateSchema& schema, const RapOptions& opt)
{
  return fit_rap_models(data, schema, opt, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.n())));
}

//! f(r | D=1, X=x) = f(r | D=1) f(r | D=1, X=x, M=1) / f(r | D=1, M=1)
inline double density_ratio_adjust(double f_r_d1, double f_stopped_x, double f_stopped)
{
  if (!(f_r_d1 > 0) || !(f_stopped_x > 0) || !(f_stopped > 0))
    throw ZeroDensity("density_ratio_adjust needs positive densities");
  return f_r_d1 * f_stopped_x / f_stopped;
}

//! P(D=1 | R=r) f(r) / P(D=1) over the precinct geography
inline double f_r_given_d1(const RapModels& m, double r)
{
  if (!(m.pd > 0))
    throw DegenerateDenominator("P(D=1) is zero");
  double s = kernel_smooth(m.geo.r, m.geo.pi, m.geo.C, m.kernel, r);
  double f = weighted_kde(m.geo.r, m.geo.C, m.kernel, r);
  return s * f / m.pd;
}

namespace detail {

inline void check_range(const RapModels& m, double r)
{
  if (r < m.rmin - m.margin - 1e-12 || r > m.rmax + m.margin + 1e-12)
    throw OutOfRange("r = " + exact(r) + " outside observed place range [" + exact(m.rmin) + ", " +
                     exact(m.rmax) + "]");
}

inline double floor_check(double v, double r, const char* what)
{
  if (!(v >= kDensityFloor))
    throw DensityUnderflow(std::string(what) + " below 1e-12 at r = " + exact(r));
  return v;
}

//! unnormalized Psi numerator at a single r
inline double psi_value(const RapModels& m, double r, const StratumKey& key, const Eigen::RowVectorXd& xenc)
{
  auto row = rx_row(m, r, xenc);
  double eo = linear_prob(m.outcome, row);
  double pr = linear_prob(m.race, row);
  double fm, fdx, fd;
  if (m.mode == DensityMode::kde) {
    auto a = m.stopped_x.find(key);
    auto b = m.black_x.find(key);
    fm = a == m.stopped_x.end() ? 0.0 : tally_kde(a->second, m.kernel, r);
    fdx = b == m.black_x.end() ? 0.0 : tally_kde(b->second, m.kernel, r);
    fd = tally_kde(m.black_all, m.kernel, r);
  } else {
    fm = beta_density(m.beta_stopped_x, xenc, r);
    fdx = beta_density(m.beta_black_x, xenc, r);
    fd = beta_pdf(sigmoid(m.beta_black_all.coef(0)), m.beta_black_all.phi, r);
  }
  floor_check(fm, r, "f(r | M=1, x)");
  floor_check(fdx, r, "f(r | D=1, M=1, x)");
  floor_check(fd, r, "f(r | D=1, M=1)");
  double f1 = floor_check(f_r_given_d1(m, r), r, "f(r | D=1)");
  return eo * pr * fm / density_ratio_adjust(f1, fdx, fd);
}

inline double naive_value(const RapModels& m, double r, const Eigen::RowVectorXd& xenc)
{
  return linear_prob(m.outcome, rx_row(m, r, xenc));
}

}  // namespace detail

inline double psi_conditional(const RapModels& m, double r, double r0, const Eigen::RowVectorXd& xraw)
{
  detail::check_range(m, r);
  detail::check_range(m, r0);
  StratumKey key(xraw.data(), xraw.data() + xraw.size());
  auto xe = m.enc.row(xraw);
  return detail::psi_value(m, r, key, xe) / detail::psi_value(m, r0, key, xe);
}

inline double psi_naive(const RapModels& m, double r, double r0, const Eigen::RowVectorXd& xraw)
{
  detail::check_range(m, r);
  detail::check_range(m, r0);
  auto xe = m.enc.row(xraw);
  return detail::naive_value(m, r, xe) / detail::naive_value(m, r0, xe);
}

struct CurveEstimate {
  std::vector<double> grid, est, lo, hi, sd_x;
  double r0 = 0.6;
  std::string variant = "full";
  std::size_t rows_used = 0;
  bool subsampled = false;
};

//! grid points inside the observed place range (plus margin)
inline std::vector<double> clip_grid(const std::vector<double>& grid, const RapModels& m)
{
  std::vector<double> g;
  for (double r : grid)
    if (r >= m.rmin - m.margin - 1e-12 && r <= m.rmax + m.margin + 1e-12)
      g.push_back(r);
  return g;
}

//! rows entering the marginal average, capped by a seeded subsample
inline std::vector<std::size_t> marginal_rows(std::size_t n, std::size_t cap, std::uint64_t seed)
{
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (cap == 0 || n <= cap)
    return rows;
  auto rng = make_rng(derive_seed(seed, 0x5a5a));
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(rows[i], rows[pick(rng)]);
  }
  rows.resize(cap);
  std::sort(rows.begin(), rows.end());
  return rows;
}

//! weighted mean over rows of Psi(r, X_i) (or the naive ratio)
inline CurveEstimate psi_marginal(const RapModels& m, const std::vector<double>& grid, double r0,
                                  const RapData& data, const std::vector<std::size_t>& rows,
                                  const Eigen::VectorXd& w, bool naive = false)
{
  if (rows.empty())
    throw InsufficientData("psi_marginal with no rows");
  for (double r : grid)
    detail::check_range(m, r);
  detail::check_range(m, r0);
  std::map<StratumKey, double> groups;
  for (std::size_t i : rows)
    if (w(static_cast<Eigen::Index>(i)) > 0)
      groups[detail::key_of(data.x, static_cast<Eigen::Index>(i))] += w(static_cast<Eigen::Index>(i));
  if (groups.empty())
    throw InsufficientData("psi_marginal with zero total weight");

  CurveEstimate c;
  c.grid = grid;
  c.r0 = r0;
  c.variant = naive ? "naive" : "full";
  c.rows_used = rows.size();
  c.subsampled = rows.size() < data.n();
  std::size_t G = grid.size();
  std::vector<double> s(G, 0.0), ss(G, 0.0);
  double sw = 0.0;
  for (const auto& [key, wt] : groups) {
    Eigen::RowVectorXd xraw = Eigen::Map<const Eigen::RowVectorXd>(key.data(), static_cast<Eigen::Index>(key.size()));
    auto xe = m.enc.row(xraw);
    double base = naive ? detail::naive_value(m, r0, xe) : detail::psi_value(m, r0, key, xe);
    for (std::size_t g = 0; g < G; ++g) {
      double v = naive ? detail::naive_value(m, grid[g], xe) : detail::psi_value(m, grid[g], key, xe);
      double psi = v / base;
      s[g] += wt * psi;
      ss[g] += wt * psi * psi;
    }
    sw += wt;
  }
  for (std::size_t g = 0; g < G; ++g) {
    double mu = s[g] / sw;
    c.est.push_back(mu);
    c.sd_x.push_back(std::sqrt(std::max(0.0, ss[g] / sw - mu * mu)));
  }
  c.lo.assign(G, std::nan(""));
  c.hi.assign(G, std::nan(""));
  return c;
}

//! percentile intervals from B multinomial row resamples
template <class Estimator>
inline void bootstrap_curve(CurveEstimate& c, Estimator&& est, std::size_t n, int B, std::uint64_t seed,
                            int threads)
{
  if (B < 2)
    throw Error("bootstrap needs B >= 2");
  std::size_t G = c.grid.size();
  std::vector<std::vector<double>> reps(static_cast<std::size_t>(B));
  parallel_for(reps.size(), threads, [&](std::size_t b) {
    auto rng = make_rng(derive_seed(seed, b));
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t k = 0; k < n; ++k)
      w(static_cast<Eigen::Index>(pick(rng))) += 1.0;
    try {
      reps[b] = est(w);
    } catch (const Error&) {
      reps[b].assign(G, std::nan(""));
    }
  });
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<double> v;
    for (const auto& r : reps)
      v.push_back(r[g]);
    c.lo[g] = percentile(v, 0.025);
    c.hi[g] = percentile(v, 0.975);
  }
}

//! Psi(r, X_i) for each listed row
inline std::vector<double> psi_row_values(const RapModels& m, double r, double r0, const RapData& data,
                                          const std::vector<std::size_t>& rows)
{
  std::map<StratumKey, double> cache;
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t i : rows) {
    auto key = detail::key_of(data.x, static_cast<Eigen::Index>(i));
    auto it = cache.find(key);
    if (it == cache.end())
      it = cache.emplace(key, psi_conditional(m, r, r0, data.x.row(static_cast<Eigen::Index>(i)))).first;
    out.push_back(it->second);
  }
  return out;
}

struct RapResult {
  CurveEstimate full, naive;
  RapModels models;
  std::vector<std::size_t> rows;
  double bandwidth = 0.0;
  DensityMode density = DensityMode::kde;
};

//! full and naive marginal curves with bootstrap intervals
inline RapResult estimate_rap(const RapData& data, const CovariateSchema& schema, const RapOptions& opt,
                              bool with_ci = true)
{
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.n()));
  RapModels m = fit_rap_models(data, schema, opt, ones);
  auto grid = clip_grid(opt.grid, m);
  auto rows = marginal_rows(data.n(), opt.cap, opt.seed);
  RapResult res;
  res.models = m;
  res.rows = rows;
  res.bandwidth = m.kernel.h;
  res.density = m.mode;
  res.full = psi_marginal(m, grid, opt.r0, data, rows, ones, false);
  res.naive = psi_marginal(m, grid, opt.r0, data, rows, ones, true);
  if (with_ci && opt.B >= 2) {
    RapOptions fixed = opt;
    fixed.bandwidth = m.kernel.h;
    for (bool naive : {false, true}) {
      auto& c = naive ? res.naive : res.full;
      bootstrap_curve(
          c,
          [&](const Eigen::VectorXd& w) {
            RapModels mb = fit_rap_models(data, schema, fixed, w);
            mb.rmin = m.rmin;
            mb.rmax = m.rmax;
            return psi_marginal(mb, grid, opt.r0, data, rows, w, naive).est;
          },
          data.n(), opt.B, derive_seed(opt.seed, naive ? 2 : 1), opt.threads);
    }
  }
  return res;
}

struct BoundReport {
  std::vector<double> grid, full, naive;
  std::vector<std::string> relation;  // ge below r0, le above, eq at r0
  std::vector<bool> holds;
  std::size_t violations = 0;
};

inline BoundReport monotone_bound_check(const CurveEstimate& full, const CurveEstimate& naive, double tol = 0.02)
{
  if (full.grid != naive.grid || full.r0 != naive.r0)
    throw GridMismatch("curves differ in grid or baseline");
  BoundReport b;
  b.grid = full.grid;
  b.full = full.est;
  b.naive = naive.est;
  for (std::size_t g = 0; g < full.grid.size(); ++g) {
    double r = full.grid[g], f = full.est[g], v = naive.est[g];
    bool ok;
    if (r == full.r0) {
      b.relation.push_back("eq");
      ok = std::abs(f - v) <= tol * std::abs(v);
    } else if (r < full.r0) {
      b.relation.push_back("ge");
      ok = f >= v * (1.0 - tol);
    } else {
      b.relation.push_back("le");
      ok = f <= v * (1.0 + tol);
    }
    b.holds.push_back(ok);
    if (!ok)
      ++b.violations;
  }
  return b;
}

}  // namespace rap
