#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include <rap/sim_harness.hpp>

namespace testutil {

inline rap::SimData scenario(int which, std::size_t n, std::uint64_t seed)
{
  rap::DgpSpec s;
  s.name = which == 2 ? "scenario2" : "scenario1";
  s.n = n;
  s.seed = seed;
  return rap::generate(s);
}

inline std::filesystem::path temp_dir(const std::string& tag)
{
  auto p = std::filesystem::temp_directory_path() / ("rap_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::filesystem::path& p, const std::string& body)
{
  std::ofstream out(p, std::ios::binary);
  out << body;
}

inline Eigen::VectorXd randn(Eigen::Index n, std::uint64_t seed)
{
  auto rng = rap::make_rng(seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v(i) = nd(rng);
  return v;
}

}  // namespace testutil
