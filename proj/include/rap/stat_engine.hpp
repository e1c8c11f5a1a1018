#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "errors.hpp"

namespace rap {

constexpr double kProbClamp = 1e-12;

inline double sigmoid(double a)
{
  if (a >= 0) {
    double e = std::exp(-a);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(a);
  return e / (1.0 + e);
}

inline double clamp_prob(double p)
{
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

// ---------------------------------------------------------------- logistic

struct GlmFit {
  Eigen::VectorXd coef;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  double grad_maxnorm = 0.0;
};

struct LogisticOptions {
  int max_iter = 100;
  double dev_tol = 1e-10;
  double grad_tol = 1e-8;
  double separation_norm = 1e4;
};

namespace detail {

inline Eigen::VectorXd unit_weights(Eigen::Index n) { return Eigen::VectorXd::Ones(n); }

inline double log1pexp(double a)
{
  return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

}  // namespace detail

//! weighted Bernoulli log-likelihood; y may hold proportions when rows are grouped
inline double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, const Eigen::VectorXd& beta)
{
  Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += w(i) * (y(i) * eta(i) - detail::log1pexp(eta(i)));
  return ll;
}

inline Eigen::VectorXd logistic_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& w, const Eigen::VectorXd& beta)
{
  Eigen::VectorXd eta = X * beta;
  Eigen::VectorXd r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    r(i) = w(i) * (y(i) - sigmoid(eta(i)));
  return X.transpose() * r;
}

inline GlmFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           std::optional<Eigen::VectorXd> weights = std::nullopt,
                           const LogisticOptions& opt = {})
{
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n)
    throw DimensionMismatch("response length does not match design rows");
  Eigen::VectorXd w = weights ? *weights : detail::unit_weights(n);
  if (w.size() != n)
    throw DimensionMismatch("weight length does not match design rows");
  double sw = 0.0, sy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w(i) < 0)
      throw Error("negative weight");
    sw += w(i);
    sy += w(i) * y(i);
  }
  if (!(sw > 0) || sy <= 0.0 || sy >= sw)
    throw AllSameResponse("response has no variation");

  GlmFit fit;
  fit.coef = Eigen::VectorXd::Zero(p);
  double dev = -2.0 * logistic_loglik(X, y, w, fit.coef);
  for (int it = 1; it <= opt.max_iter; ++it) {
    fit.iterations = it;
    Eigen::VectorXd eta = X * fit.coef;
    Eigen::VectorXd wt(n), res(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double pi = sigmoid(eta(i));
      wt(i) = w(i) * pi * (1.0 - pi);
      res(i) = w(i) * (y(i) - pi);
    }
    Eigen::VectorXd g = X.transpose() * res;
    Eigen::MatrixXd H = X.transpose() * wt.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd dd = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || dd.minCoeff() <= 1e-13 * std::max(1.0, dd.maxCoeff())) {
      if (fit.coef.norm() > 10.0)
        throw Separation("weighted system degenerate with growing coefficients");
      throw SingularWeightedSystem("X'WX is singular");
    }
    Eigen::VectorXd step = ldlt.solve(g);
    double t = 1.0, dnew = dev;
    Eigen::VectorXd cand = fit.coef;
    for (int h = 0; h < 40; ++h) {
      cand = fit.coef + t * step;
      dnew = -2.0 * logistic_loglik(X, y, w, cand);
      if (std::isfinite(dnew) && dnew <= dev + 1e-12 * std::abs(dev))
        break;
      t *= 0.5;
    }
    fit.coef = cand;
    if (fit.coef.norm() > opt.separation_norm)
      throw Separation("coefficient norm exceeded " + std::to_string(opt.separation_norm));
    double change = std::abs(dev - dnew);
    dev = dnew;
    fit.grad_maxnorm = logistic_gradient(X, y, w, fit.coef).cwiseAbs().maxCoeff();
    if (change < opt.dev_tol && fit.grad_maxnorm <= opt.grad_tol) {
      fit.converged = true;
      break;
    }
    if (dev < 1e-8 * sw && fit.coef.norm() > 50.0)
      throw Separation("deviance vanished with diverging coefficients");
  }
  fit.deviance = dev;
  return fit;
}

template <class Row>
inline double predict_prob(const GlmFit& fit, const Row& row)
{
  if (row.size() != fit.coef.size())
    throw DimensionMismatch("row length " + std::to_string(row.size()) + " vs " +
                            std::to_string(fit.coef.size()) + " coefficients");
  double eta = 0.0;
  for (Eigen::Index j = 0; j < fit.coef.size(); ++j)
    eta += fit.coef(j) * row(j);
  return clamp_prob(sigmoid(eta));
}

//! Collapses identical design rows. With by_response the response value is
//! part of the key (for continuous responses); otherwise y is averaged.
struct GroupedRows {
  Eigen::MatrixXd X;
  Eigen::VectorXd y, w;
};

inline GroupedRows group_rows(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, bool by_response = false)
{
  std::map<std::vector<double>, std::size_t> index;
  std::vector<std::vector<double>> keys;
  std::vector<double> sy, sw;
  std::vector<double> key(static_cast<std::size_t>(X.cols() + (by_response ? 1 : 0)));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (w(i) == 0.0)
      continue;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      key[static_cast<std::size_t>(j)] = X(i, j);
    if (by_response)
      key.back() = y(i);
    auto [it, fresh] = index.emplace(key, keys.size());
    if (fresh) {
      keys.push_back(key);
      sy.push_back(0.0);
      sw.push_back(0.0);
    }
    sy[it->second] += w(i) * y(i);
    sw[it->second] += w(i);
  }
  GroupedRows g;
  g.X.resize(static_cast<Eigen::Index>(keys.size()), X.cols());
  g.y.resize(static_cast<Eigen::Index>(keys.size()));
  g.w.resize(static_cast<Eigen::Index>(keys.size()));
  Eigen::Index r = 0;
  for (const auto& [k, idx] : index) {
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      g.X(r, j) = k[static_cast<std::size_t>(j)];
    g.y(r) = by_response ? k.back() : sy[idx] / sw[idx];
    g.w(r) = sw[idx];
    ++r;
  }
  return g;
}

inline GlmFit fit_logistic_grouped(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const Eigen::VectorXd& w, const LogisticOptions& opt = {})
{
  auto g = group_rows(X, y, w);
  return fit_logistic(g.X, g.y, g.w, opt);
}

// ---------------------------------------------------------------- beta regression

struct BetaFit {
  Eigen::VectorXd coef;
  double phi = 1.0;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  double grad_maxnorm = 0.0;
};

constexpr double kBetaClamp = 1e-6;

inline double clamp_unit(double v) { return std::clamp(v, kBetaClamp, 1.0 - kBetaClamp); }

//! theta = (mean coefficients, log phi)
inline double beta_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& w, const Eigen::VectorXd& theta)
{
  const Eigen::Index p = X.cols();
  double phi = std::exp(theta(p));
  Eigen::VectorXd eta = X * theta.head(p);
  double ll = 0.0, lgp = std::lgamma(phi);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double mu = sigmoid(eta(i)), yi = clamp_unit(y(i));
    double a = mu * phi, b = (1.0 - mu) * phi;
    ll += w(i) * (lgp - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(yi) +
                  (b - 1.0) * std::log1p(-yi));
  }
  return ll;
}

inline Eigen::VectorXd beta_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& w, const Eigen::VectorXd& theta,
                                  Eigen::MatrixXd* hessian = nullptr)
{
  using boost::math::digamma;
  using boost::math::trigamma;
  const Eigen::Index p = X.cols();
  double phi = std::exp(theta(p));
  Eigen::VectorXd eta = X * theta.head(p);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p + 1);
  if (hessian)
    hessian->setZero(p + 1, p + 1);
  double dphi = digamma(phi), tphi = trigamma(phi);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double mu = sigmoid(eta(i)), yi = clamp_unit(y(i));
    double md = mu * (1.0 - mu);
    double a = mu * phi, b = (1.0 - mu) * phi;
    double da = digamma(a), db = digamma(b);
    double ly = std::log(yi), l1y = std::log1p(-yi);
    double ystar = ly - l1y, mstar = da - db;
    double deta = phi * (ystar - mstar) * md;
    double dtau = phi * (dphi - mu * da - (1.0 - mu) * db + mu * ly + (1.0 - mu) * l1y);
    g.head(p) += w(i) * deta * X.row(i).transpose();
    g(p) += w(i) * dtau;
    if (hessian) {
      double ta = trigamma(a), tb = trigamma(b);
      double hee = phi * (-phi * (ta + tb) * md * md + (ystar - mstar) * md * (1.0 - 2.0 * mu));
      double het = phi * md * ((ystar - mstar) - phi * (mu * ta - (1.0 - mu) * tb));
      double htt = dtau + phi * phi * (tphi - mu * mu * ta - (1.0 - mu) * (1.0 - mu) * tb);
      hessian->topLeftCorner(p, p) += w(i) * hee * X.row(i).transpose() * X.row(i);
      hessian->col(p).head(p) += w(i) * het * X.row(i).transpose();
      (*hessian)(p, p) += w(i) * htt;
    }
  }
  if (hessian)
    hessian->row(p).head(p) = hessian->col(p).head(p).transpose();
  return g;
}

struct BetaOptions {
  int max_iter = 200;
  double grad_tol = 1e-6;
  double ridge = 1e-8;
};

inline BetaFit fit_beta_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   std::optional<Eigen::VectorXd> weights = std::nullopt,
                                   const BetaOptions& opt = {})
{
  const Eigen::Index n = X.rows(), p = X.cols();
  if (y.size() != n)
    throw DimensionMismatch("response length does not match design rows");
  Eigen::VectorXd w = weights ? *weights : detail::unit_weights(n);
  Eigen::VectorXd yc = y.unaryExpr([](double v) { return clamp_unit(v); });

  // start: OLS on logit scale, moment estimate of phi
  Eigen::VectorXd z = yc.unaryExpr([](double v) { return std::log(v / (1.0 - v)); });
  Eigen::VectorXd sq = w.cwiseSqrt();
  Eigen::MatrixXd Xw = sq.asDiagonal() * X;
  Eigen::VectorXd b0 = Xw.colPivHouseholderQr().solve(sq.cwiseProduct(z));
  double sw = w.sum(), m = w.dot(yc) / sw;
  double v = w.dot((yc.array() - m).square().matrix()) / sw;
  double phi0 = v > 0 ? std::max(m * (1 - m) / v - 1.0, 0.5) : 10.0;
  Eigen::VectorXd theta(p + 1);
  theta.head(p) = b0;
  theta(p) = std::log(phi0);

  BetaFit fit;
  double ll = beta_loglik(X, yc, w, theta);
  for (int it = 1; it <= opt.max_iter; ++it) {
    fit.iterations = it;
    Eigen::MatrixXd H;
    Eigen::VectorXd g = beta_score(X, yc, w, theta, &H);
    fit.grad_maxnorm = g.cwiseAbs().maxCoeff();
    if (fit.grad_maxnorm <= opt.grad_tol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd A = -H;
    double lam = opt.ridge;
    Eigen::VectorXd step;
    for (int k = 0; k < 60; ++k) {
      Eigen::MatrixXd B = A;
      B.diagonal().array() += lam;
      Eigen::LLT<Eigen::MatrixXd> llt(B);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(g);
        break;
      }
      lam = std::max(lam * 10.0, 1e-6 * A.diagonal().cwiseAbs().maxCoeff());
    }
    if (step.size() == 0)
      step = g / std::max(1.0, g.norm());
    double t = 1.0, lnew = ll;
    Eigen::VectorXd cand = theta;
    bool moved = false;
    for (int h = 0; h < 50; ++h) {
      cand = theta + t * step;
      lnew = beta_loglik(X, yc, w, cand);
      if (std::isfinite(lnew) && lnew >= ll - 1e-12 * std::abs(ll)) {
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved)
      break;
    theta = cand;
    ll = lnew;
  }
  fit.coef = theta.head(p);
  fit.phi = std::exp(theta(p));
  fit.loglik = ll;
  if (!fit.converged)
    throw NonConvergence("beta regression did not converge in " + std::to_string(opt.max_iter) +
                         " iterations (gradient " + std::to_string(fit.grad_maxnorm) + ")");
  return fit;
}

template <class Row>
inline double beta_mean(const BetaFit& fit, const Row& row)
{
  if (row.size() != fit.coef.size())
    throw DimensionMismatch("row length does not match beta fit");
  double eta = 0.0;
  for (Eigen::Index j = 0; j < fit.coef.size(); ++j)
    eta += fit.coef(j) * row(j);
  return sigmoid(eta);
}

inline double beta_pdf(double mu, double phi, double r)
{
  if (r <= 0.0 || r >= 1.0)
    return 0.0;
  double a = mu * phi, b = (1.0 - mu) * phi;
  return std::exp(std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(r) +
                  (b - 1.0) * std::log1p(-r));
}

template <class Row>
inline double beta_density(const BetaFit& fit, const Row& row, double r)
{
  return beta_pdf(beta_mean(fit, row), fit.phi, r);
}

// ---------------------------------------------------------------- OLS

inline Eigen::VectorXd ols_residuals(const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
{
  if (y.size() != X.rows())
    throw DimensionMismatch("response length does not match design rows");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols())
    throw RankDeficient("design rank " + std::to_string(qr.rank()) + " < " +
                        std::to_string(X.cols()));
  Eigen::VectorXd b = qr.solve(y);
  return y - X * b;
}

// ---------------------------------------------------------------- kernels

//! t density with 2 degrees of freedom
inline double t2_kernel(double u)
{
  return (1.0 / (2.0 * std::sqrt(2.0))) * std::pow(1.0 + 0.5 * u * u, -1.5);
}

struct KernelSpec {
  double h = 0.05;
  int df = 2;
};

inline void check_spec(const KernelSpec& k)
{
  if (!(k.h > 0))
    throw Error("bandwidth must be positive");
  if (k.df != 2)
    throw Error("only the t(2) kernel is implemented");
}

inline double kde(const Eigen::VectorXd& points, const KernelSpec& spec, double r)
{
  if (points.size() == 0)
    throw EmptyPointSet("kde with no points");
  check_spec(spec);
  double s = 0.0;
  for (Eigen::Index j = 0; j < points.size(); ++j)
    s += t2_kernel((r - points(j)) / spec.h);
  return s / (static_cast<double>(points.size()) * spec.h);
}

inline double weighted_kde(const Eigen::VectorXd& points, const Eigen::VectorXd& weights,
                           const KernelSpec& spec, double r)
{
  if (points.size() == 0)
    throw EmptyPointSet("weighted_kde with no points");
  if (weights.size() != points.size())
    throw DimensionMismatch("weights vs points");
  check_spec(spec);
  double s = 0.0, sw = 0.0;
  for (Eigen::Index j = 0; j < points.size(); ++j) {
    if (weights(j) < 0)
      throw Error("negative kde weight");
    s += t2_kernel((r - points(j)) / spec.h) * weights(j);
    sw += weights(j);
  }
  if (!(sw > 0))
    throw AllZeroWeights("weighted_kde weights sum to zero");
  return s / (sw * spec.h);
}

inline double kernel_smooth(const Eigen::VectorXd& points, const Eigen::VectorXd& values,
                            const KernelSpec& spec, double r)
{
  if (points.size() == 0)
    throw EmptyPointSet("kernel_smooth with no points");
  if (values.size() != points.size())
    throw DimensionMismatch("values vs points");
  check_spec(spec);
  double s = 0.0, sk = 0.0;
  for (Eigen::Index j = 0; j < points.size(); ++j) {
    double k = t2_kernel((r - points(j)) / spec.h);
    s += k * values(j);
    sk += k;
  }
  return s / sk;
}

inline double kernel_smooth(const Eigen::VectorXd& points, const Eigen::VectorXd& values,
                            const Eigen::VectorXd& weights, const KernelSpec& spec, double r)
{
  if (points.size() == 0)
    throw EmptyPointSet("kernel_smooth with no points");
  if (values.size() != points.size() || weights.size() != points.size())
    throw DimensionMismatch("values or weights vs points");
  check_spec(spec);
  double s = 0.0, sk = 0.0;
  for (Eigen::Index j = 0; j < points.size(); ++j) {
    double k = t2_kernel((r - points(j)) / spec.h) * weights(j);
    s += k * values(j);
    sk += k;
  }
  if (!(sk > 0))
    throw AllZeroWeights("kernel_smooth weights sum to zero");
  return s / sk;
}

//! distinct values with summed weights, ascending
struct Tally {
  Eigen::VectorXd value, weight;
  double total() const { return weight.sum(); }
};

inline Tally tally(const Eigen::VectorXd& values, const Eigen::VectorXd& weights)
{
  std::map<double, double> acc;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (weights(i) != 0.0)
      acc[values(i)] += weights(i);
  Tally t;
  t.value.resize(static_cast<Eigen::Index>(acc.size()));
  t.weight.resize(static_cast<Eigen::Index>(acc.size()));
  Eigen::Index k = 0;
  for (const auto& [v, w] : acc) {
    t.value(k) = v;
    t.weight(k) = w;
    ++k;
  }
  return t;
}

//! quantile (linear interpolation between order statistics) treating
//! weights as frequencies of the sorted distinct values
inline double weighted_quantile(const Tally& t, double prob)
{
  double n = t.total();
  double pos = (n - 1.0) * prob;  // 0-based position in expanded sample
  auto at = [&](double k) {
    double cum = 0.0;
    for (Eigen::Index j = 0; j < t.value.size(); ++j) {
      cum += t.weight(j);
      if (k < cum - 1e-9)
        return t.value(j);
    }
    return t.value(t.value.size() - 1);
  };
  double lo = std::floor(pos);
  double frac = pos - lo;
  double a = at(lo);
  if (frac == 0.0)
    return a;
  return a + frac * (at(lo + 1.0) - a);
}

//! 0.9 min(sd, IQR/1.34) m^(-1/5) with frequency weights
inline double rule_of_thumb_bandwidth(const Eigen::VectorXd& values,
                                      std::optional<Eigen::VectorXd> weights = std::nullopt)
{
  if (values.size() == 0)
    throw EmptyPointSet("bandwidth of empty point set");
  Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(values.size());
  Tally t = tally(values, w);
  double n = t.total();
  if (!(n > 1.0))
    return 1e-3;
  double mean = t.value.dot(t.weight) / n;
  double ss = 0.0;
  for (Eigen::Index j = 0; j < t.value.size(); ++j)
    ss += t.weight(j) * (t.value(j) - mean) * (t.value(j) - mean);
  double sd = std::sqrt(ss / (n - 1.0));
  double iqr = weighted_quantile(t, 0.75) - weighted_quantile(t, 0.25);
  double s = std::min(sd, iqr / 1.34);
  if (!(s > 0))
    s = sd;
  if (!(s > 0))
    return 1e-3;
  return 0.9 * s * std::pow(n, -0.2);
}

}  // namespace rap
