#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace rap {

enum class ColumnKind { categorical, continuous };
enum class TableMode { administrative, full };

struct CovariateColumn {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
  std::vector<std::string> levels;  // sorted, first is the reference level
  bool standardize = false;
};

struct CovariateSchema {
  std::vector<CovariateColumn> columns;

  std::size_t size() const { return columns.size(); }
  int index_of(const std::string& name) const
  {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].name == name)
        return static_cast<int>(i);
    return -1;
  }
  static CovariateSchema categorical(const std::string& name,
                                     std::vector<std::string> levels);
  static CovariateSchema continuous(const std::vector<std::string>& names);
};

namespace detail {

inline bool parse_double(const std::string& s, double& out)
{
  if (s.empty())
    return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+')
    ++b;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

inline std::string trim(const std::string& s)
{
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos)
    return {};
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv(const std::string& line)
{
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ','))
    out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

//! shortest representation that parses back to the same double
inline std::string exact(double v)
{
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

//! numeric-aware level ordering: numeric if every level parses, else lexicographic
inline void sort_levels(std::vector<std::string>& levels)
{
  bool numeric = std::all_of(levels.begin(), levels.end(), [](const std::string& s) {
    double v;
    return detail::parse_double(s, v);
  });
  if (numeric) {
    std::stable_sort(levels.begin(), levels.end(), [](const std::string& a, const std::string& b) {
      double x, y;
      detail::parse_double(a, x);
      detail::parse_double(b, y);
      return x < y;
    });
  } else {
    std::sort(levels.begin(), levels.end());
  }
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
}

inline CovariateSchema CovariateSchema::categorical(const std::string& name,
                                                    std::vector<std::string> levels)
{
  sort_levels(levels);
  CovariateSchema s;
  s.columns.push_back({name, ColumnKind::categorical, std::move(levels), false});
  return s;
}

inline CovariateSchema CovariateSchema::continuous(const std::vector<std::string>& names)
{
  CovariateSchema s;
  for (const auto& n : names)
    s.columns.push_back({n, ColumnKind::continuous, {}, false});
  return s;
}

//! One row per encounter. Categorical covariates hold the level index.
struct EncounterTable {
  std::vector<int> y, m, d;
  Eigen::MatrixXd x;  // n x k raw covariates
  std::vector<int> precinct;
  int q = 0;
  std::optional<std::vector<double>> u;  // simulated confounder
  std::optional<std::vector<double>> r;  // row-level place value, simulation only

  std::size_t n() const { return y.size(); }

  EncounterTable subset(const std::vector<std::size_t>& rows) const
  {
    EncounterTable t;
    t.q = q;
    t.y.reserve(rows.size());
    t.m.reserve(rows.size());
    t.d.reserve(rows.size());
    t.precinct.reserve(rows.size());
    t.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    if (u)
      t.u.emplace();
    if (r)
      t.r.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::size_t k = rows[i];
      t.y.push_back(y[k]);
      t.m.push_back(m[k]);
      t.d.push_back(d[k]);
      t.precinct.push_back(precinct[k]);
      t.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(k));
      if (u)
        t.u->push_back((*u)[k]);
      if (r)
        t.r->push_back((*r)[k]);
    }
    return t;
  }

  //! administrative view: rows with m = 1
  EncounterTable stopped() const
  {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n(); ++i)
      if (m[i] == 1)
        rows.push_back(i);
    return subset(rows);
  }
};

inline void validate(const EncounterTable& t, TableMode mode)
{
  std::size_t n = t.n();
  if (t.m.size() != n || t.d.size() != n || t.precinct.size() != n ||
      static_cast<std::size_t>(t.x.rows()) != n)
    throw DimensionMismatch("encounter columns differ in length");
  if (t.u && t.u->size() != n)
    throw DimensionMismatch("u column length");
  if (t.r && t.r->size() != n)
    throw DimensionMismatch("r column length");
  for (std::size_t i = 0; i < n; ++i) {
    auto bin = [&](int v, const char* col) {
      if (v != 0 && v != 1)
        throw NonBinaryField("row " + std::to_string(i) + ": column " + col + " = " +
                             std::to_string(v));
    };
    bin(t.y[i], "y");
    bin(t.m[i], "m");
    bin(t.d[i], "d");
    if (t.y[i] == 1 && t.m[i] == 0)
      throw MandatoryReportingViolation("row " + std::to_string(i) + ": y = 1 with m = 0");
    if (mode == TableMode::administrative && t.m[i] != 1)
      throw BadValue("row " + std::to_string(i) + ": m = 0 in administrative table");
    if (t.precinct[i] < 0 || t.precinct[i] >= t.q)
      throw BadValue("row " + std::to_string(i) + ": precinct out of range");
  }
}

inline bool is_valid(const EncounterTable& t, TableMode mode)
{
  try {
    validate(t, mode);
    return true;
  } catch (const Error&) {
    return false;
  }
}

//! Reads the CSV layout `y,m,d,precinct,<covariates>[,u][,r]`.
//! Categorical columns with an empty level list get their levels from the data.
inline EncounterTable load_encounters(const std::string& path, CovariateSchema& schema,
                                      TableMode mode)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw MissingColumn("empty file " + path);
  auto header = detail::split_csv(line);
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < header.size(); ++i)
    pos[header[i]] = static_cast<int>(i);
  for (const char* req : {"y", "m", "d", "precinct"})
    if (!pos.count(req))
      throw MissingColumn(std::string("missing column ") + req);
  for (const auto& c : schema.columns)
    if (!pos.count(c.name))
      throw MissingColumn("missing covariate column " + c.name);
  for (const auto& h : header) {
    if (h == "y" || h == "m" || h == "d" || h == "precinct" || h == "u" || h == "r")
      continue;
    if (schema.index_of(h) < 0)
      throw UnexpectedColumn("column " + h + " not in schema");
  }

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty())
      continue;
    auto f = detail::split_csv(line);
    if (f.size() != header.size())
      throw BadValue("row " + std::to_string(rows.size()) + ": expected " +
                     std::to_string(header.size()) + " fields");
    rows.push_back(std::move(f));
  }

  std::size_t k = schema.size();
  for (auto& c : schema.columns) {
    if (c.kind == ColumnKind::categorical && c.levels.empty()) {
      std::set<std::string> seen;
      for (const auto& r : rows)
        seen.insert(r[pos[c.name]]);
      c.levels.assign(seen.begin(), seen.end());
    }
    if (c.kind == ColumnKind::categorical)
      sort_levels(c.levels);
  }

  EncounterTable t;
  std::size_t n = rows.size();
  t.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  bool has_u = pos.count("u") > 0, has_r = pos.count("r") > 0;
  if (has_u)
    t.u.emplace();
  if (has_r)
    t.r.emplace();
  int maxp = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = rows[i];
    auto num = [&](const std::string& col) {
      double v;
      if (!detail::parse_double(f[pos[col]], v))
        throw BadValue("row " + std::to_string(i) + ", column " + col + ": '" + f[pos[col]] + "'");
      return v;
    };
    auto bin = [&](const std::string& col) {
      double v = num(col);
      if (v != 0.0 && v != 1.0)
        throw NonBinaryField("row " + std::to_string(i) + ", column " + col + ": " + f[pos[col]]);
      return static_cast<int>(v);
    };
    t.y.push_back(bin("y"));
    t.m.push_back(bin("m"));
    t.d.push_back(bin("d"));
    double p = num("precinct");
    if (p < 0 || p != std::floor(p))
      throw BadValue("row " + std::to_string(i) + ", column precinct: " + f[pos["precinct"]]);
    t.precinct.push_back(static_cast<int>(p));
    maxp = std::max(maxp, static_cast<int>(p));
    for (std::size_t j = 0; j < k; ++j) {
      const auto& c = schema.columns[j];
      const std::string& s = f[pos[c.name]];
      if (c.kind == ColumnKind::categorical) {
        auto it = std::find(c.levels.begin(), c.levels.end(), s);
        if (it == c.levels.end())
          throw BadValue("row " + std::to_string(i) + ", column " + c.name + ": level '" + s + "'");
        t.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            static_cast<double>(it - c.levels.begin());
      } else {
        t.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = num(c.name);
      }
    }
    if (has_u)
      t.u->push_back(num("u"));
    if (has_r)
      t.r->push_back(num("r"));
  }
  t.q = maxp + 1;
  validate(t, mode);
  return t;
}

inline void write_encounters(const std::string& path, const EncounterTable& t,
                             const CovariateSchema& schema)
{
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write " + path);
  out << "y,m,d,precinct";
  for (const auto& c : schema.columns)
    out << ',' << c.name;
  if (t.u)
    out << ",u";
  if (t.r)
    out << ",r";
  out << '\n';
  for (std::size_t i = 0; i < t.n(); ++i) {
    out << t.y[i] << ',' << t.m[i] << ',' << t.d[i] << ',' << t.precinct[i];
    for (std::size_t j = 0; j < schema.size(); ++j) {
      double v = t.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (schema.columns[j].kind == ColumnKind::categorical)
        out << ',' << schema.columns[j].levels.at(static_cast<std::size_t>(v));
      else
        out << ',' << detail::exact(v);
    }
    if (t.u)
      out << ',' << detail::exact((*t.u)[i]);
    if (t.r)
      out << ',' << detail::exact((*t.r)[i]);
    out << '\n';
  }
}

//! Maps raw covariate rows to design rows (intercept first).
class Encoder {
 public:
  Encoder() = default;
  Encoder(const CovariateSchema& schema, const Eigen::MatrixXd& raw) : schema_(schema)
  {
    labels_.push_back("(intercept)");
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto& c = schema.columns[j];
      double center = 0.0, scale = 1.0;
      if (c.kind == ColumnKind::categorical) {
        for (std::size_t l = 1; l < c.levels.size(); ++l)
          labels_.push_back(c.name + "=" + c.levels[l]);
      } else {
        if (c.standardize && raw.rows() > 1) {
          auto col = raw.col(static_cast<Eigen::Index>(j));
          center = col.mean();
          scale = std::sqrt((col.array() - center).square().sum() / (raw.rows() - 1));
          if (!(scale > 0))
            scale = 1.0;
        }
        labels_.push_back(c.name);
      }
      center_.push_back(center);
      scale_.push_back(scale);
    }
  }

  Eigen::Index width() const { return static_cast<Eigen::Index>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const CovariateSchema& schema() const { return schema_; }
  bool standardized(std::size_t j) const { return scale_[j] != 1.0 || center_[j] != 0.0; }

  template <class Row>
  void encode_row(const Row& raw, double* out) const
  {
    out[0] = 1.0;
    Eigen::Index o = 1;
    for (std::size_t j = 0; j < schema_.size(); ++j) {
      const auto& c = schema_.columns[j];
      double v = raw(static_cast<Eigen::Index>(j));
      if (c.kind == ColumnKind::categorical) {
        double lv = std::round(v);
        if (lv != v || lv < 0 || lv >= static_cast<double>(c.levels.size()))
          throw UnknownLevel("column " + c.name + ": level index " + std::to_string(v));
        for (std::size_t l = 1; l < c.levels.size(); ++l)
          out[o++] = (static_cast<std::size_t>(lv) == l) ? 1.0 : 0.0;
      } else {
        out[o++] = (v - center_[j]) / scale_[j];
      }
    }
  }

  Eigen::RowVectorXd row(const Eigen::RowVectorXd& raw) const
  {
    if (raw.size() != static_cast<Eigen::Index>(schema_.size()))
      throw DimensionMismatch("covariate row length");
    Eigen::RowVectorXd out(width());
    encode_row(raw, out.data());
    return out;
  }

  Eigen::MatrixXd matrix(const Eigen::MatrixXd& raw) const
  {
    Eigen::MatrixXd out(raw.rows(), width());
    Eigen::RowVectorXd tmp(width());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      encode_row(raw.row(i), tmp.data());
      out.row(i) = tmp;
    }
    return out;
  }

 private:
  CovariateSchema schema_;
  std::vector<std::string> labels_;
  std::vector<double> center_, scale_;
};

struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<std::string> labels;
  Encoder encoder;
};

inline DesignMatrix encode(const EncounterTable& t, const CovariateSchema& schema)
{
  if (static_cast<std::size_t>(t.x.cols()) != schema.size())
    throw DimensionMismatch("schema does not cover covariate columns");
  DesignMatrix dm;
  dm.encoder = Encoder(schema, t.x);
  dm.X = dm.encoder.matrix(t.x);
  dm.labels = dm.encoder.labels();
  return dm;
}

struct PrecinctSummary {
  std::vector<std::size_t> count;
  std::vector<std::size_t> black;
  std::vector<double> r;  // NaN for empty precincts
  std::vector<std::string> warnings;
};

inline PrecinctSummary precinct_summary(const EncounterTable& t)
{
  if (t.n() == 0)
    throw EmptyPointSet("precinct_summary on empty table");
  PrecinctSummary s;
  s.count.assign(static_cast<std::size_t>(t.q), 0);
  s.black.assign(static_cast<std::size_t>(t.q), 0);
  for (std::size_t i = 0; i < t.n(); ++i) {
    auto p = static_cast<std::size_t>(t.precinct[i]);
    s.count[p] += 1;
    s.black[p] += static_cast<std::size_t>(t.d[i]);
  }
  s.r.resize(s.count.size());
  for (std::size_t j = 0; j < s.count.size(); ++j) {
    if (s.count[j] == 0) {
      s.r[j] = std::nan("");
      s.warnings.push_back("EmptyPrecinct(" + std::to_string(j) + ")");
    } else {
      s.r[j] = static_cast<double>(s.black[j]) / static_cast<double>(s.count[j]);
    }
  }
  return s;
}

}  // namespace rap
