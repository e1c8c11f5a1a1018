#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "benchmark.hpp"
#include "core_data.hpp"
#include "crr.hpp"
#include "errors.hpp"
#include "mobility.hpp"
#include "parallel.hpp"
#include "race_place.hpp"
#include "sensitivity.hpp"
#include "sim_harness.hpp"

#ifndef RAP_VERSION
#define RAP_VERSION "0.0.0-unknown"
#endif

namespace rap::cli {

using json = nlohmann::json;

enum class Kind { integer, number, text, numbers, integers, texts, boolean };

struct OptSpec {
  std::string name;
  Kind kind;
  json def;
  std::string help;
};

inline const std::vector<std::string>& commands()
{
  static const std::vector<std::string> c{"simulate", "crr", "rap", "bounds", "sens-contour", "benchmark", "study"};
  return c;
}

inline std::vector<OptSpec> common_options()
{
  return {
      {"seed", Kind::integer, 1, "base random seed"},
      {"threads", Kind::integer, 0, "worker count (0: RAP_THREADS, then hardware)"},
      {"out", Kind::text, ".", "output directory"},
  };
}

inline std::vector<OptSpec> input_options(bool flows_required)
{
  std::string tail = flows_required ? "" : " (optional)";
  return {
      {"encounters", Kind::text, "", "encounter CSV"},
      {"flows", Kind::text, "", "mobility flow CSV origin,dest,value" + tail},
      {"residential", Kind::text, "", "residential proportion CSV precinct,p" + tail},
      {"covariates", Kind::texts, json::array(), "covariate columns (default: every non-reserved column)"},
      {"categorical", Kind::texts, json::array(), "covariates treated as categorical"},
      {"standardize", Kind::texts, json::array(), "continuous covariates to standardize"},
  };
}

inline std::vector<OptSpec> curve_options()
{
  return {
      {"grid", Kind::numbers, default_grid(), "place grid"},
      {"r0", Kind::number, 0.6, "baseline place value"},
      {"density", Kind::text, "auto", "place density model: auto, kde or beta"},
      {"bandwidth", Kind::number, 0.0, "kernel bandwidth (0: rule of thumb)"},
      {"cap", Kind::integer, 50000, "row cap for the marginal average"},
      {"margin", Kind::number, 0.0, "extrapolation allowed beyond the observed place range"},
      {"B", Kind::integer, 200, "bootstrap replicates"},
  };
}

inline std::vector<OptSpec> command_options(const std::string& cmd)
{
  std::vector<OptSpec> o = common_options();
  auto add = [&](std::vector<OptSpec> v) { o.insert(o.end(), v.begin(), v.end()); };
  if (cmd == "simulate") {
    add({{"dgp", Kind::text, "scenario1",
          "scenario1, scenario2, monotone, interp_confounding, interp_ratio or benchmark_appH"},
         {"n", Kind::integer, 100000, "rows"},
         {"q", Kind::integer, 35, "precincts"},
         {"a", Kind::number, 0.0, "violation strength"},
         {"signs", Kind::integers, json::array({1, 1, 1, 1}), "sign vector"},
         {"slope_sign", Kind::integer, 1, "monotone process slope sign"}});
  } else if (cmd == "crr") {
    add(input_options(true));
    add({{"scope", Kind::text, "precinct", "precinct, pooled or citywide"},
         {"variants", Kind::texts, json::array({"mobility", "census", "blend", "naive"}), "estimator variants"},
         {"alpha", Kind::number, 0.9, "blend weight on staying home"},
         {"B", Kind::integer, 200, "bootstrap replicates"},
         {"min_stops", Kind::integer, 30, "minimum stops per precinct"},
         {"stratified", Kind::boolean, false, "separate outcome fits by race"},
         {"x", Kind::texts, json::array(), "covariate values for a conditional CRR (default: marginal)"}});
  } else if (cmd == "rap") {
    add(input_options(true));
    add(curve_options());
  } else if (cmd == "bounds") {
    add(input_options(true));
    add(curve_options());
    add({{"gammas", Kind::numbers, json::array({2.0, 5.0}), "covariate-shift factors"},
         {"mean_xi", Kind::number, 1.0, "sensitivity mean"},
         {"sd_xi", Kind::number, 0.0, "sensitivity sd"},
         {"rho", Kind::text, "worst", "correlation parameter or 'worst'"},
         {"tol", Kind::number, 0.02, "monotone check tolerance"}});
  } else if (cmd == "sens-contour") {
    add({{"psi_hat", Kind::number, 1.3, "curve value at the chosen r"},
         {"sd_psi", Kind::number, 0.2, "cross-row sd of Psi at the chosen r"},
         {"mean_range", Kind::numbers, json::array({0.0, 0.5}), "range of |mean_xi - 1|"},
         {"sd_range", Kind::numbers, json::array({0.0, 0.5}), "range of sd_xi"},
         {"resolution", Kind::integer, 26, "points per axis"}});
  } else if (cmd == "benchmark") {
    add(input_options(false));
    add({{"leave_out", Kind::texts, json::array(), "covariates to benchmark (default: all)"},
         {"K", Kind::numbers, json::array({1.0, 2.0}), "strength multipliers"},
         {"r", Kind::number, 0.2, "place value"},
         {"r0", Kind::number, 0.6, "baseline place value"}});
  } else if (cmd == "study") {
    add({{"kind", Kind::text, "table1", "table1, sweep or benchmark"},
         {"scenario", Kind::integer, 1, "table1 scenario (1 or 2)"},
         {"reps", Kind::integer, 100, "replicates"},
         {"n", Kind::integer, 100000, "rows per replicate"},
         {"q", Kind::integer, 35, "precincts"},
         {"x_eval", Kind::integer, 2, "covariate level for the conditional curve"},
         {"crr_x", Kind::integer, 4, "covariate level for the citywide CRR"},
         {"grid", Kind::numbers, default_grid(), "place grid"},
         {"r0", Kind::number, 0.6, "baseline place value"},
         {"dgp", Kind::text, "interp_confounding", "sweep process"},
         {"a_grid", Kind::numbers, json::array({0.0, 0.25, 0.5, 0.75, 1.0}), "sweep strengths"},
         {"K", Kind::number, 1.0, "benchmark multiplier"}});
  } else {
    throw ConfigError("unknown command " + cmd);
  }
  return o;
}

// ---------------------------------------------------------------- config resolution

inline std::vector<std::string> split_list(const std::string& s)
{
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(detail::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!detail::trim(cur).empty() || !out.empty())
    out.push_back(detail::trim(cur));
  return out;
}

inline double to_number(const std::string& s, const std::string& path)
{
  double v;
  if (!detail::parse_double(detail::trim(s), v))
    throw ConfigError(path + ": expected a number, got '" + s + "'");
  return v;
}

inline long long to_integer(const std::string& s, const std::string& path)
{
  double v = to_number(s, path);
  if (v != std::floor(v))
    throw ConfigError(path + ": expected an integer, got '" + s + "'");
  return static_cast<long long>(v);
}

//! flag text to typed json
inline json from_text(const std::string& s, Kind k, const std::string& path)
{
  switch (k) {
    case Kind::integer:
      return to_integer(s, path);
    case Kind::number:
      return to_number(s, path);
    case Kind::text:
      return s;
    case Kind::boolean:
      if (s == "true" || s == "1")
        return true;
      if (s == "false" || s == "0")
        return false;
      throw ConfigError(path + ": expected true or false");
    case Kind::numbers: {
      json a = json::array();
      for (const auto& v : split_list(s))
        a.push_back(to_number(v, path));
      return a;
    }
    case Kind::integers: {
      json a = json::array();
      for (const auto& v : split_list(s))
        a.push_back(to_integer(v, path));
      return a;
    }
    case Kind::texts: {
      json a = json::array();
      for (const auto& v : split_list(s))
        a.push_back(v);
      return a;
    }
  }
  return nullptr;
}

//! config json value checked against the option kind
inline json coerce(const json& v, Kind k, const std::string& path)
{
  auto bad = [&](const char* what) { return ConfigError(path + ": expected " + what); };
  switch (k) {
    case Kind::integer:
      if (v.is_number_integer())
        return v;
      if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()))
        return static_cast<long long>(v.get<double>());
      throw bad("an integer");
    case Kind::number:
      if (v.is_number())
        return v.get<double>();
      throw bad("a number");
    case Kind::text:
      if (v.is_string())
        return v;
      throw bad("a string");
    case Kind::boolean:
      if (v.is_boolean())
        return v;
      throw bad("a boolean");
    case Kind::numbers:
    case Kind::integers:
    case Kind::texts: {
      if (!v.is_array())
        throw bad("an array");
      json a = json::array();
      Kind e = k == Kind::numbers ? Kind::number : k == Kind::integers ? Kind::integer : Kind::text;
      for (std::size_t i = 0; i < v.size(); ++i)
        a.push_back(coerce(v[i], e, path + "[" + std::to_string(i) + "]"));
      return a;
    }
  }
  return v;
}

//! defaults, then config top-level keys, then the command section, then flags
inline json resolve(const std::string& cmd, const json& config, const std::map<std::string, std::string>& flags)
{
  auto specs = command_options(cmd);
  std::map<std::string, Kind> kinds;
  json out = json::object();
  for (const auto& s : specs) {
    kinds[s.name] = s.kind;
    out[s.name] = s.def;
  }
  std::set<std::string> known;
  for (const auto& c : commands())
    for (const auto& s : command_options(c))
      known.insert(s.name);
  if (!config.is_null() && !config.is_object())
    throw ConfigError("config: expected an object");
  if (config.is_object()) {
    for (const auto& [key, val] : config.items()) {
      if (std::find(commands().begin(), commands().end(), key) != commands().end()) {
        if (key != cmd)
          continue;
        if (!val.is_object())
          throw ConfigError(key + ": expected an object");
        for (const auto& [k2, v2] : val.items()) {
          if (!kinds.count(k2))
            throw ConfigError(key + "." + k2 + ": unknown key");
        }
        continue;
      }
      if (!known.count(key))
        throw ConfigError(key + ": unknown key");
      if (kinds.count(key))
        out[key] = coerce(val, kinds[key], key);
    }
    if (config.contains(cmd))
      for (const auto& [k2, v2] : config[cmd].items())
        out[k2] = coerce(v2, kinds[k2], cmd + "." + k2);
  }
  for (const auto& [k, v] : flags) {
    if (!kinds.count(k))
      throw ConfigError("--" + k + ": unknown flag");
    out[k] = from_text(v, kinds[k], "--" + k);
  }
  return out;
}

// ---------------------------------------------------------------- output helpers

inline std::string num(double v)
{
  if (!std::isfinite(v))
    return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Output {
  std::filesystem::path dir;
  std::vector<std::string> files;

  void csv(const std::string& name, const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows)
  {
    std::ofstream f(dir / name);
    if (!f)
      throw Error("cannot write " + (dir / name).string());
    for (std::size_t i = 0; i < header.size(); ++i)
      f << (i ? "," : "") << header[i];
    f << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i)
        f << (i ? "," : "") << r[i];
      f << '\n';
    }
    files.push_back(name);
  }

  void text(const std::string& name, const std::string& body)
  {
    std::ofstream f(dir / name);
    if (!f)
      throw Error("cannot write " + (dir / name).string());
    f << body;
    files.push_back(name);
  }

  void sidecar(const std::string& cmd, const json& cfg, json extra)
  {
    json meta;
    meta["command"] = cmd;
    meta["version"] = RAP_VERSION;
    json c = cfg;
    c.erase("threads");
    c.erase("out");
    meta["config"] = c;
    meta["seed"] = cfg["seed"];
    meta["outputs"] = files;
    if (!extra.is_null())
      meta["details"] = std::move(extra);
    std::ofstream f(dir / (cmd + ".json"));
    f << meta.dump(2) << '\n';
  }
};

inline json vec_json(const Eigen::VectorXd& v)
{
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    a.push_back(std::isfinite(v(i)) ? json(v(i)) : json(nullptr));
  return a;
}

// ---------------------------------------------------------------- inputs

struct Inputs {
  EncounterTable table;
  CovariateSchema schema;
  std::optional<MobilityModel> mob;
};

inline std::vector<std::string> header_of(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError("encounters: cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  return detail::split_csv(line);
}

inline Inputs load_inputs(const json& cfg, bool need_mobility, TableMode mode)
{
  std::string path = cfg["encounters"];
  if (path.empty())
    throw ConfigError("encounters: path required");
  auto names = cfg["covariates"].get<std::vector<std::string>>();
  if (names.empty())
    for (const auto& h : header_of(path))
      if (h != "y" && h != "m" && h != "d" && h != "precinct" && h != "u" && h != "r")
        names.push_back(h);
  auto cats = cfg["categorical"].get<std::vector<std::string>>();
  auto stds = cfg["standardize"].get<std::vector<std::string>>();
  Inputs in;
  for (const auto& nm : names) {
    CovariateColumn c;
    c.name = nm;
    c.kind = std::find(cats.begin(), cats.end(), nm) != cats.end() ? ColumnKind::categorical : ColumnKind::continuous;
    c.standardize = std::find(stds.begin(), stds.end(), nm) != stds.end();
    in.schema.columns.push_back(c);
  }
  for (const auto& c : cats)
    if (in.schema.index_of(c) < 0)
      throw ConfigError("categorical: '" + c + "' is not a covariate");
  in.table = load_encounters(path, in.schema, mode);
  std::string fp = cfg["flows"], rp = cfg["residential"];
  if (need_mobility && (fp.empty() || rp.empty()))
    throw ConfigError("flows/residential: both paths required");
  if (!fp.empty() && !rp.empty()) {
    auto flows = load_flows(fp, in.table.q);
    int q = static_cast<int>(flows.N.rows());
    auto p = load_residential(rp, q);
    if (p.size() > q) {
      Eigen::MatrixXd N = Eigen::MatrixXd::Zero(p.size(), p.size());
      N.topLeftCorner(q, q) = flows.N;
      flows.N = N;
    }
    in.mob = MobilityModel::from_flows(flows, p);
    in.table.q = static_cast<int>(in.mob->p.size());
  }
  return in;
}

inline std::uint64_t seed_of(const json& cfg)
{
  return static_cast<std::uint64_t>(cfg["seed"].get<long long>());
}

inline int threads_of(const json& cfg)
{
  int t = cfg["threads"].get<int>();
  return resolve_threads(t > 0 ? std::optional<int>(t) : std::nullopt);
}

inline RapOptions rap_options(const json& cfg)
{
  RapOptions o;
  o.grid = cfg["grid"].get<std::vector<double>>();
  std::sort(o.grid.begin(), o.grid.end());
  o.r0 = cfg["r0"];
  std::string d = cfg["density"];
  if (d == "auto")
    o.density = DensityMode::automatic;
  else if (d == "kde")
    o.density = DensityMode::kde;
  else if (d == "beta")
    o.density = DensityMode::beta;
  else
    throw ConfigError("density: expected auto, kde or beta");
  double bw = cfg["bandwidth"];
  if (bw < 0)
    throw ConfigError("bandwidth: must be non-negative");
  if (bw > 0)
    o.bandwidth = bw;
  long long cap = cfg["cap"];
  if (cap < 0)
    throw ConfigError("cap: must be non-negative");
  o.cap = static_cast<std::size_t>(cap);
  o.margin = cfg["margin"];
  o.B = cfg["B"];
  o.seed = seed_of(cfg);
  o.threads = threads_of(cfg);
  return o;
}

inline const char* density_name(DensityMode m)
{
  return m == DensityMode::kde ? "kde" : m == DensityMode::beta ? "beta" : "auto";
}

inline void curve_rows(const CurveEstimate& c, std::vector<std::vector<std::string>>& rows,
                       const std::vector<double>* lo = nullptr, const std::vector<double>* hi = nullptr)
{
  for (std::size_t g = 0; g < c.grid.size(); ++g) {
    std::vector<std::string> r{num(c.grid[g]), num(c.est[g]), num(c.lo[g]), num(c.hi[g]), c.variant, num(c.r0)};
    if (lo) {
      r.push_back(num((*lo)[g]));
      r.push_back(num((*hi)[g]));
    }
    rows.push_back(std::move(r));
  }
}

// ---------------------------------------------------------------- commands

inline void cmd_simulate(const json& cfg, Output& out)
{
  DgpSpec spec;
  spec.name = cfg["dgp"];
  long long n = cfg["n"], q = cfg["q"];
  if (n < 1 || q < 1)
    throw ConfigError("n, q: must be positive");
  spec.n = static_cast<std::size_t>(n);
  spec.q = static_cast<int>(q);
  spec.seed = seed_of(cfg);
  spec.a = cfg["a"];
  spec.signs = cfg["signs"].get<std::vector<int>>();
  spec.slope_sign = cfg["slope_sign"];
  SimData sim = generate(spec);
  write_encounters((out.dir / "full.csv").string(), sim.table, sim.schema);
  out.files.push_back("full.csv");
  EncounterTable admin = sim.table.stopped();
  admin.u.reset();
  write_encounters((out.dir / "admin.csv").string(), admin, sim.schema);
  out.files.push_back("admin.csv");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < sim.table.n(); ++i)
    rows.push_back({std::to_string(sim.truth.y1[i]), std::to_string(sim.truth.y0[i]),
                    std::to_string(sim.truth.m1[i]), std::to_string(sim.truth.m0[i])});
  out.csv("truth.csv", {"y1", "y0", "m1", "m0"}, rows);
  rows.clear();
  for (Eigen::Index j = 0; j < sim.population.size(); ++j)
    rows.push_back({std::to_string(j), std::to_string(j), detail::exact(sim.population(j))});
  out.csv("flows.csv", {"origin", "dest", "value"}, rows);
  rows.clear();
  for (Eigen::Index j = 0; j < sim.share.size(); ++j)
    rows.push_back({std::to_string(j), detail::exact(sim.share(j))});
  out.csv("residential.csv", {"precinct", "p"}, rows);
  json extra;
  json cats = json::array();
  for (const auto& c : sim.schema.columns)
    if (c.kind == ColumnKind::categorical)
      cats.push_back(c.name);
  extra["categorical"] = cats;
  extra["rows"] = sim.table.n();
  extra["stopped_rows"] = admin.n();
  out.sidecar("simulate", cfg, extra);
}

inline void cmd_crr(const json& cfg, Output& out)
{
  Inputs in = load_inputs(cfg, true, TableMode::administrative);
  CrrOptions o;
  std::string scope = cfg["scope"];
  if (scope == "precinct")
    o.scope = CrrScope::precinct;
  else if (scope == "pooled")
    o.scope = CrrScope::pooled;
  else if (scope == "citywide")
    o.scope = CrrScope::citywide;
  else
    throw ConfigError("scope: expected precinct, pooled or citywide");
  o.variants = cfg["variants"].get<std::vector<std::string>>();
  for (const auto& v : o.variants)
    if (v != "mobility" && v != "census" && v != "blend" && v != "naive")
      throw ConfigError("variants: unknown variant '" + v + "'");
  o.alpha = cfg["alpha"];
  o.B = cfg["B"];
  o.min_stops = cfg["min_stops"];
  o.stratified = cfg["stratified"];
  o.seed = seed_of(cfg);
  o.threads = threads_of(cfg);
  auto xs = cfg["x"].get<std::vector<std::string>>();
  if (!xs.empty()) {
    if (xs.size() != in.schema.size())
      throw ConfigError("x: need one value per covariate");
    Eigen::RowVectorXd xr(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const auto& c = in.schema.columns[j];
      if (c.kind == ColumnKind::categorical) {
        auto it = std::find(c.levels.begin(), c.levels.end(), xs[j]);
        if (it == c.levels.end())
          throw ConfigError("x[" + std::to_string(j) + "]: unknown level '" + xs[j] + "'");
        xr(static_cast<Eigen::Index>(j)) = static_cast<double>(it - c.levels.begin());
      } else {
        xr(static_cast<Eigen::Index>(j)) = to_number(xs[j], "x[" + std::to_string(j) + "]");
      }
    }
    o.at_x = xr;
  }
  auto est = estimate_crr(in.table, in.schema, *in.mob, o);
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : est)
    rows.push_back({e.precinct < 0 ? "all" : std::to_string(e.precinct), e.variant, num(e.value), num(e.lo),
                    num(e.hi)});
  out.csv("crr.csv", {"precinct", "variant", "estimate", "ci_lo", "ci_hi"}, rows);
  json extra;
  extra["pi_time_weighted"] = vec_json(in.mob->pi);
  extra["pi_product"] = vec_json(in.mob->pi_product);
  extra["marginal_share"] = in.mob->marginal_share();
  extra["census_share"] = in.mob->census_share();
  out.sidecar("crr", cfg, extra);
}

inline json rap_details(const RapResult& r)
{
  json extra;
  extra["bandwidth"] = r.bandwidth;
  extra["density"] = density_name(r.density);
  extra["rows_used"] = r.full.rows_used;
  extra["subsampled"] = r.full.subsampled;
  extra["place_range"] = {r.models.rmin, r.models.rmax};
  extra["grid_used"] = r.full.grid;
  return extra;
}

inline void cmd_rap(const json& cfg, Output& out)
{
  Inputs in = load_inputs(cfg, true, TableMode::administrative);
  RapOptions o = rap_options(cfg);
  RapData data = prepare_rap_data(in.table, *in.mob);
  RapResult res = estimate_rap(data, in.schema, o, o.B >= 2);
  std::vector<std::vector<std::string>> rows;
  curve_rows(res.full, rows);
  curve_rows(res.naive, rows);
  out.csv("curve.csv", {"r", "estimate", "ci_lo", "ci_hi", "variant", "r0"}, rows);
  out.sidecar("rap", cfg, rap_details(res));
}

inline void cmd_bounds(const json& cfg, Output& out)
{
  Inputs in = load_inputs(cfg, true, TableMode::administrative);
  RapOptions o = rap_options(cfg);
  RapData data = prepare_rap_data(in.table, *in.mob);
  RapResult res = estimate_rap(data, in.schema, o, o.B >= 2);

  SensitivityParams sp;
  sp.mean_xi = cfg["mean_xi"];
  sp.sd_xi = cfg["sd_xi"];
  std::string rho = cfg["rho"];
  if (rho != "worst")
    sp.rho = to_number(rho, "rho");
  auto bc = bound_curve(res.full, {sp});
  std::vector<std::vector<std::string>> rows;
  curve_rows(res.full, rows, &bc.lo, &bc.hi);
  out.csv("bound_curve.csv", {"r", "estimate", "ci_lo", "ci_hi", "variant", "r0", "bound_lo", "bound_hi"}, rows);

  auto rep = monotone_bound_check(res.full, res.naive, cfg["tol"].get<double>());
  rows.clear();
  for (std::size_t g = 0; g < rep.grid.size(); ++g)
    rows.push_back({num(rep.grid[g]), num(rep.full[g]), num(rep.naive[g]), rep.relation[g],
                    rep.holds[g] ? "1" : "0"});
  out.csv("monotone.csv", {"r", "full", "naive", "relation", "holds"}, rows);

  auto gammas = cfg["gammas"].get<std::vector<double>>();
  rows.clear();
  for (double r : res.full.grid) {
    auto vals = psi_row_values(res.models, r, o.r0, data, res.rows);
    for (double g : gammas) {
      if (!(g > 1.0))
        throw ConfigError("gammas: values must exceed 1");
      auto lo = lp_bounds_closed_form(vals, g, Direction::min);
      auto hi = lp_bounds_closed_form(vals, g, Direction::max);
      rows.push_back({num(r), num(g), num(lo.value), num(hi.value)});
    }
  }
  out.csv("lp_bounds.csv", {"r", "gamma", "lower", "upper"}, rows);
  json extra = rap_details(res);
  extra["monotone_violations"] = rep.violations;
  out.sidecar("bounds", cfg, extra);
}

inline void cmd_contour(const json& cfg, Output& out)
{
  auto mr = cfg["mean_range"].get<std::vector<double>>();
  auto sr = cfg["sd_range"].get<std::vector<double>>();
  if (mr.size() != 2 || sr.size() != 2)
    throw ConfigError("mean_range/sd_range: need two values");
  int res = cfg["resolution"];
  if (res < 2)
    throw ConfigError("resolution: need at least 2");
  auto bc = contour_grid(cfg["psi_hat"], cfg["sd_psi"], {mr[0], mr[1]}, {sr[0], sr[1]}, res);
  std::vector<std::vector<std::string>> rows;
  std::size_t explained = 0;
  for (const auto& c : bc.cells) {
    rows.push_back({num(c.mean_dev), num(c.sd), num(c.max_bias), c.explains ? "1" : "0"});
    explained += c.explains;
  }
  out.csv("contour.csv", {"mean_dev", "sd", "max_bias", "explains"}, rows);
  json extra;
  extra["cells_explaining"] = explained;
  out.sidecar("sens-contour", cfg, extra);
}

inline void cmd_benchmark(const json& cfg, Output& out)
{
  Inputs in = load_inputs(cfg, false, TableMode::full);
  Eigen::VectorXd pr;
  if (in.mob)
    pr = in.mob->pi;
  if (!in.table.r && !in.mob)
    throw ConfigError("flows/residential: required when the table has no r column");
  auto o = outcome_rows(in.table, in.schema, in.mob ? &pr : nullptr);
  auto lo = cfg["leave_out"].get<std::vector<std::string>>();
  if (lo.empty())
    for (const auto& c : in.schema.columns)
      lo.push_back(c.name);
  auto Ks = cfg["K"].get<std::vector<double>>();
  double r = cfg["r"], r0 = cfg["r0"];
  std::vector<std::vector<std::string>> rows, irows;
  std::uint64_t seed = seed_of(cfg);
  std::size_t task = 0;
  for (const auto& name : lo) {
    int j = in.schema.index_of(name);
    if (j < 0)
      throw ConfigError("leave_out: '" + name + "' is not a covariate");
    for (double K : Ks) {
      auto rep = formal_benchmark(o, in.schema, static_cast<std::size_t>(j), K, r, r0, derive_seed(seed, task++));
      for (const auto& b : rep.rows)
        rows.push_back({b.covariate, num(b.K), std::to_string(b.sign_y), std::to_string(b.sign_r), num(b.mean_xi),
                        num(b.sd_xi), b.selected ? "1" : "0"});
      irows.push_back({name, num(K), num(rep.informal.mean), num(rep.informal.sd), num(rep.k_m), num(rep.k_v),
                       num(rep.base_r2_y), num(rep.base_r2_r)});
    }
  }
  out.csv("benchmark.csv", {"covariate", "K", "sign_y", "sign_r", "mean_xi", "sd_xi", "selected"}, rows);
  out.csv("informal.csv", {"covariate", "K", "mean_xi", "sd_xi", "k_m", "k_v", "r2_y", "r2_r"}, irows);
  json extra;
  if (in.table.u) {
    auto t = xi_from_confounder(in.table, in.schema, r, r0, in.mob ? &pr : nullptr);
    extra["confounder_xi"] = {{"mean", t.mean}, {"sd", t.sd}};
  }
  out.sidecar("benchmark", cfg, extra);
}

inline std::string study_table(const std::vector<MetricsReport>& ms)
{
  std::ostringstream s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %12s %12s %12s %6s %8s\n", "estimand", "pct_bias", "signed_pct", "mse",
                "reps", "failed");
  s << buf;
  for (const auto& m : ms) {
    std::snprintf(buf, sizeof buf, "%-16s %12.4f %12.4f %12.4e %6zu %8zu\n", m.estimand.c_str(), m.avg_pct_bias,
                  m.signed_pct_bias, m.mse, m.reps, m.failures);
    s << buf;
  }
  return s.str();
}

inline void cmd_study(const json& cfg, Output& out)
{
  std::string kind = cfg["kind"];
  std::uint64_t seed = seed_of(cfg);
  int threads = threads_of(cfg);
  json extra;
  if (kind == "table1") {
    StudyOptions o;
    o.scenario = cfg["scenario"];
    if (o.scenario != 1 && o.scenario != 2)
      throw ConfigError("scenario: expected 1 or 2");
    long long reps = cfg["reps"], n = cfg["n"];
    if (reps < 1 || n < 1)
      throw ConfigError("reps, n: must be positive");
    o.reps = static_cast<std::size_t>(reps);
    o.n = static_cast<std::size_t>(n);
    o.q = cfg["q"];
    o.x_eval = cfg["x_eval"];
    o.crr_x = cfg["crr_x"];
    if (o.x_eval < 1 || o.x_eval > 4 || o.crr_x < 1 || o.crr_x > 4)
      throw ConfigError("x_eval, crr_x: levels run from 1 to 4");
    o.rap.grid = cfg["grid"].get<std::vector<double>>();
    std::sort(o.rap.grid.begin(), o.rap.grid.end());
    o.rap.r0 = cfg["r0"];
    o.seed = seed;
    o.threads = threads;
    auto res = run_study(o);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : res.records)
      rows.push_back({std::to_string(r.rep), r.estimand, num(r.r), num(r.estimate), num(r.truth)});
    out.csv("study_estimates.csv", {"rep", "estimand", "r", "estimate", "truth"}, rows);
    rows.clear();
    const auto& mm = res.metrics;
    for (std::size_t k = 0; k < mm[0].per_rep_index.size(); ++k) {
      std::vector<std::string> row{std::to_string(mm[0].per_rep_index[k])};
      for (const auto& m : mm) {
        row.push_back(num(m.per_rep_pct_bias[k]));
        row.push_back(num(m.per_rep_sq_err[k]));
      }
      rows.push_back(row);
    }
    std::vector<std::string> hdr{"rep"};
    for (const auto& m : mm) {
      hdr.push_back(m.estimand + "_pct_bias");
      hdr.push_back(m.estimand + "_sq_err");
    }
    out.csv("study_metrics.csv", hdr, rows);
    rows.clear();
    for (const auto& m : mm)
      rows.push_back({m.estimand, num(m.avg_pct_bias), num(m.signed_pct_bias), num(m.mse), std::to_string(m.reps),
                      std::to_string(m.failures)});
    out.csv("study_summary.csv", {"estimand", "avg_pct_bias", "signed_pct_bias", "mse", "reps", "failures"}, rows);
    out.text("study_table.txt", study_table(mm));
    extra["grid_common"] = res.grid;
  } else if (kind == "sweep") {
    SweepOptions o;
    o.dgp = cfg["dgp"];
    long long n = cfg["n"];
    if (n < 1)
      throw ConfigError("n: must be positive");
    o.n = static_cast<std::size_t>(n);
    o.a_grid = cfg["a_grid"].get<std::vector<double>>();
    o.seed = seed;
    o.threads = threads;
    auto sw = interpretability_sweep(o);
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : sw)
      rows.push_back({s.dgp, num(s.a), num(s.mean_dev), num(s.sd), num(s.mean_dev_tilde), num(s.sd_tilde)});
    out.csv("sweep.csv", {"dgp", "a", "mean_dev", "sd", "mean_dev_tilde", "sd_tilde"}, rows);
  } else if (kind == "benchmark") {
    long long n = cfg["n"];
    if (n < 10)
      throw ConfigError("n: too small");
    auto b = benchmark_study(static_cast<std::size_t>(n), seed, cfg["K"].get<double>());
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"confounder", "", "", num(b.truth.mean), num(b.truth.sd), ""});
    rows.push_back({"informal", "", "", num(b.informal.mean), num(b.informal.sd), ""});
    for (const auto& r : b.formal.rows)
      rows.push_back({"formal", std::to_string(r.sign_y), std::to_string(r.sign_r), num(r.mean_xi), num(r.sd_xi),
                      r.selected ? "1" : "0"});
    out.csv("benchmark_study.csv", {"method", "sign_y", "sign_r", "mean_xi", "sd_xi", "selected"}, rows);
    extra["r"] = b.r;
    extra["r0"] = b.r0;
  } else {
    throw ConfigError("kind: expected table1, sweep or benchmark");
  }
  out.sidecar("study", cfg, extra);
}

inline void dispatch(const std::string& cmd, const json& cfg)
{
  Output out;
  out.dir = cfg["out"].get<std::string>();
  std::filesystem::create_directories(out.dir);
  if (cmd == "simulate")
    cmd_simulate(cfg, out);
  else if (cmd == "crr")
    cmd_crr(cfg, out);
  else if (cmd == "rap")
    cmd_rap(cfg, out);
  else if (cmd == "bounds")
    cmd_bounds(cfg, out);
  else if (cmd == "sens-contour")
    cmd_contour(cfg, out);
  else if (cmd == "benchmark")
    cmd_benchmark(cfg, out);
  else if (cmd == "study")
    cmd_study(cfg, out);
}

inline json read_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError("config: cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline int run(int argc, char** argv)
{
  CLI::App app{"race-and-place policing estimators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", RAP_VERSION);
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::string> configs;
  std::map<std::string, CLI::App*> subs;
  std::map<std::string, std::vector<std::pair<std::string, CLI::Option*>>> opts;
  for (const auto& c : commands()) {
    auto* sub = app.add_subcommand(c, "");
    subs[c] = sub;
    sub->add_option("--config", configs[c], "JSON config file");
    for (const auto& s : command_options(c)) {
      std::string def = s.def.is_string() ? s.def.get<std::string>() : s.def.dump();
      auto* o = sub->add_option("--" + s.name, values[c][s.name], s.help + " [" + def + "]");
      opts[c].push_back({s.name, o});
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    for (const auto& c : commands()) {
      if (!subs[c]->parsed())
        continue;
      std::map<std::string, std::string> flags;
      for (const auto& [name, o] : opts[c])
        if (o->count() > 0)
          flags[name] = values[c][name];
      json config = configs[c].empty() ? json() : read_config(configs[c]);
      json cfg = resolve(c, config, flags);
      dispatch(c, cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "ConfigError: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace rap::cli
