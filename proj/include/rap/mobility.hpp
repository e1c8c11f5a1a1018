#pragma once

#include <fstream>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "core_data.hpp"
#include "errors.hpp"

namespace rap {

//! N(i, j): time residents of precinct i spend in precinct j
struct FlowCounts {
  Eigen::MatrixXd N;
};

inline Eigen::MatrixXd build_transition(const FlowCounts& flows)
{
  const auto& N = flows.N;
  Eigen::MatrixXd T(N.rows(), N.cols());
  for (Eigen::Index i = 0; i < N.rows(); ++i) {
    double s = N.row(i).sum();
    if (!(s > 0))
      throw ZeroRow("flow row " + std::to_string(i) + " has zero total");
    T.row(i) = N.row(i) / s;
  }
  return T;
}

//! literal matrix product T p with row-normalized T
inline Eigen::VectorXd adjust_composition_product(const Eigen::MatrixXd& T, const Eigen::VectorXd& p)
{
  if (T.cols() != p.size() || T.rows() != p.size())
    throw DimensionMismatch("transition matrix vs residential proportions");
  return T * p;
}

//! time-share weighted average of residential proportions of everyone present in j
inline Eigen::VectorXd adjust_composition(const FlowCounts& flows, const Eigen::VectorXd& p)
{
  const auto& N = flows.N;
  if (N.rows() != p.size() || N.cols() != p.size())
    throw DimensionMismatch("flows vs residential proportions");
  Eigen::VectorXd pi(N.cols());
  for (Eigen::Index j = 0; j < N.cols(); ++j) {
    double tot = N.col(j).sum();
    if (!(tot > 0)) {
      pi(j) = std::nan("");
      continue;
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < N.rows(); ++i)
      acc += (N(i, j) / tot) * p(i);
    pi(j) = acc;
  }
  return pi;
}

inline Eigen::MatrixXd blend_transition(int q, double alpha)
{
  if (alpha < 0.0 || alpha > 1.0)
    throw Error("blend weight must lie in [0, 1]");
  Eigen::MatrixXd T = Eigen::MatrixXd::Constant(q, q, (1.0 - alpha) / q);
  T.diagonal().array() += alpha;
  return T;
}

inline Eigen::VectorXd time_weights(const FlowCounts& flows)
{
  return flows.N.colwise().sum().transpose();
}

struct MobilityModel {
  Eigen::MatrixXd T;
  Eigen::VectorXd p, pi, pi_product, C;
  Eigen::VectorXd residents;  // row sums of the flows

  static MobilityModel from_flows(const FlowCounts& flows, const Eigen::VectorXd& p)
  {
    MobilityModel m;
    m.T = build_transition(flows);
    m.p = p;
    m.pi = adjust_composition(flows, p);
    m.pi_product = adjust_composition_product(m.T, p);
    m.C = time_weights(flows);
    m.residents = flows.N.rowwise().sum();
    return m;
  }

  //! everyone stays home; C holds residential population sizes
  static MobilityModel stay_home(const Eigen::VectorXd& population, const Eigen::VectorXd& p)
  {
    FlowCounts f{Eigen::MatrixXd(population.asDiagonal())};
    return from_flows(f, p);
  }

  //! P(D=1) as the time-weighted average of pi
  double marginal_share() const
  {
    double s = 0.0, w = 0.0;
    for (Eigen::Index j = 0; j < C.size(); ++j) {
      if (!std::isfinite(pi(j)))
        continue;
      s += C(j) * pi(j);
      w += C(j);
    }
    return s / w;
  }

  //! P(D=1) from residential proportions weighted by resident totals
  double census_share() const
  {
    return residents.dot(p) / residents.sum();
  }
};

inline FlowCounts load_flows(const std::string& path, int q)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  auto h = detail::split_csv(line);
  if (h.size() < 3 || h[0] != "origin" || h[1] != "dest" || h[2] != "value")
    throw MissingColumn("flow file header must be origin,dest,value");
  std::map<std::pair<int, int>, double> acc;
  int maxid = q - 1;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty())
      continue;
    auto f = detail::split_csv(line);
    double o, d, v;
    if (f.size() < 3 || !detail::parse_double(f[0], o) || !detail::parse_double(f[1], d) ||
        !detail::parse_double(f[2], v) || v < 0 || o < 0 || d < 0)
      throw BadValue("flow row " + std::to_string(row));
    acc[{static_cast<int>(o), static_cast<int>(d)}] += v;
    maxid = std::max({maxid, static_cast<int>(o), static_cast<int>(d)});
    ++row;
  }
  FlowCounts fc;
  fc.N = Eigen::MatrixXd::Zero(maxid + 1, maxid + 1);
  for (const auto& [k, v] : acc)
    fc.N(k.first, k.second) += v;
  return fc;
}

inline Eigen::VectorXd load_residential(const std::string& path, int q)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  auto h = detail::split_csv(line);
  if (h.size() < 2 || h[0] != "precinct" || h[1] != "p")
    throw MissingColumn("residential file header must be precinct,p");
  std::map<int, double> acc;
  int maxid = q - 1;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty())
      continue;
    auto f = detail::split_csv(line);
    double j, p;
    if (f.size() < 2 || !detail::parse_double(f[0], j) || !detail::parse_double(f[1], p) ||
        p < 0 || p > 1)
      throw BadValue("residential row '" + line + "'");
    acc[static_cast<int>(j)] = p;
    maxid = std::max(maxid, static_cast<int>(j));
  }
  Eigen::VectorXd p = Eigen::VectorXd::Zero(maxid + 1);
  for (const auto& [j, v] : acc)
    p(j) = v;
  return p;
}

}  // namespace rap
