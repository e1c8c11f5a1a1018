#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <rap/benchmark.hpp>
#include <rap/cli.hpp>
#include <rap/crr.hpp>
#include <rap/race_place.hpp>
#include <rap/sensitivity.hpp>
#include <rap/sim_harness.hpp>

#include "checks.hpp"
#include "helpers.hpp"

using namespace rap;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail)
{
  std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok)
    ++failures;
}

std::string fmt(const char* f, auto... a)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::RowVectorXd level(int x)
{
  Eigen::RowVectorXd v(1);
  v(0) = x - 1;
  return v;
}

void guarded(int id, const std::string& name, const std::function<void()>& body)
{
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

void study_table()
{
  auto t0 = std::chrono::steady_clock::now();
  StudyOptions o;
  o.reps = 100;
  o.n = 100000;
  o.q = 35;
  o.threads = resolve_threads();
  o.scenario = 1;
  auto s1 = run_study(o);
  o.scenario = 2;
  auto s2 = run_study(o);
  double m1 = s1.metrics[0].avg_pct_bias, c1 = s1.metrics[2].avg_pct_bias;
  double m2 = s2.metrics[0].avg_pct_bias, c2 = s2.metrics[2].avg_pct_bias;
  bool ok = m1 <= 3.0 && c1 <= 3.0 && c2 >= 7.0 && c2 <= 17.0 && m2 <= 4.0 && m2 < c2;
  report(1, "table-1 study (n=100000, q=35, 100 reps)", ok,
         fmt("scenario 1 psi_bar %.2f%% crr %.2f%%; scenario 2 psi_bar %.2f%% crr %.2f%%; failed reps %zu and %zu of 100; %.0fs", m1,
             c1, m2, c2, s1.metrics[0].failures, s2.metrics[0].failures, seconds_since(t0)));
}

void twin_benchmark()
{
  auto t0 = std::chrono::steady_clock::now();
  auto b = benchmark_study(100000, 1);
  double secs = seconds_since(t0);
  const BenchmarkRow* sel = nullptr;
  for (const auto& r : b.formal.rows)
    if (r.selected)
      sel = &r;
  bool truth_ok = std::abs(b.truth.mean - 1.071) <= 0.02 && std::abs(b.truth.sd - 0.063) <= 0.02;
  bool informal_ok = b.informal.mean < 1.0 && b.informal.sd <= 0.02;
  bool formal_ok = std::abs(sel->mean_xi - b.truth.mean) <= 0.02 && std::abs(sel->sd_xi - b.truth.sd) <= 0.02;
  report(2, "benchmark with omitted twin covariate (n=100000)", truth_ok && informal_ok && formal_ok && secs < 120,
         fmt("truth (%.4f, %.4f) %s; informal (%.4f, %.4f) %s; formal (%.4f, %.4f) %s; %.1fs", b.truth.mean,
             b.truth.sd, truth_ok ? "ok" : "off", b.informal.mean, b.informal.sd, informal_ok ? "ok" : "off",
             sel->mean_xi, sel->sd_xi, formal_ok ? "ok" : "off", secs));
}

void lp_oracle()
{
  auto rng = make_rng(2024);
  std::uniform_int_distribution<int> nn(1, 12);
  std::uniform_real_distribution<double> gd(0.0, 1.0), vd(-3.0, 3.0);
  double worst_val = 0.0, worst_w = 0.0;
  int instances = 0;
  for (int k = 0; k < 150; ++k) {
    std::vector<double> v(static_cast<std::size_t>(nn(rng)));
    for (auto& a : v)
      a = vd(rng);
    double g = 10.0 - 9.0 * gd(rng) * 0.999;
    for (auto dir : {Direction::min, Direction::max}) {
      auto b = lp_bounds_closed_form(v, g, dir);
      worst_val = std::max(worst_val, std::abs(b.value - lp_bounds_oracle(v, g, dir)));
      double s = 0.0;
      for (double w : b.weights) {
        worst_w = std::max({worst_w, 1.0 / g - w, w - g});
        s += w;
      }
      worst_w = std::max(worst_w, std::abs(s - static_cast<double>(v.size())));
      ++instances;
    }
  }
  auto ex = lp_bounds_closed_form({1, 2, 3}, 2.0, Direction::min);
  bool ex_ok = std::abs(ex.value - 1.5) <= 1e-12 && std::abs(ex.weights[0] - 2.0) <= 1e-12 &&
               std::abs(ex.weights[1] - 0.5) <= 1e-12 && std::abs(ex.weights[2] - 0.5) <= 1e-12;
  report(3, "covariate-shift LP vs vertex enumeration", worst_val <= 1e-10 && worst_w <= 1e-12 && ex_ok,
         fmt("%d instances, max |closed - oracle| %.2e, max weight infeasibility %.2e; {1,2,3} g=2 lower %.6f "
             "weights (%.3f, %.3f, %.3f)",
             instances, worst_val, worst_w, ex.value, ex.weights[0], ex.weights[1], ex.weights[2]));
}

void closed_form_truth()
{
  const int reps = 100;
  std::vector<double> est(reps), naive(reps);
  RapOptions o;
  o.margin = 0.2;
  parallel_for(static_cast<std::size_t>(reps), resolve_threads(), [&](std::size_t k) {
    DgpSpec sp;
    sp.seed = derive_seed(11, k);
    auto sim = generate(sp);
    auto data = prepare_rap_data(sim.table.stopped(), sim.mobility());
    auto m = fit_rap_models(data, sim.schema, o);
    est[k] = psi_conditional(m, 0.2, 0.6, level(2));
    naive[k] = psi_naive(m, 0.2, 0.6, level(2));
  });
  double truth = sigmoid(1.1) / sigmoid(0.3);
  double mean = std::accumulate(est.begin(), est.end(), 0.0) / reps;
  double mn = std::accumulate(naive.begin(), naive.end(), 0.0) / reps;
  report(4, "conditional curve at x=2, r=0.2, r0=0.6 (100 reps)", std::abs(mean / truth - 1.0) <= 0.05,
         fmt("mean %.4f vs truth %.4f (%.1f%%); r=0.2 lies below the observed place range, margin 0.2", mean, truth,
             100.0 * (mean / truth - 1.0)));
  std::printf("INFO [4] naive ratio at the same point: mean %.4f (%.1f%%)\n", mn, 100.0 * (mn / truth - 1.0));
}

void invariants()
{
  auto sim = testutil::scenario(1, 100000, 21);
  auto admin = sim.table.stopped();
  auto data = prepare_rap_data(admin, sim.mobility());
  RapOptions o;
  o.B = 0;
  auto res = estimate_rap(data, sim.schema, o, false);
  bool base_one = false;
  for (std::size_t g = 0; g < res.full.grid.size(); ++g)
    if (res.full.grid[g] == o.r0)
      base_one = res.full.est[g] == 1.0 && res.naive.est[g] == 1.0;

  double rebase = 0.0;
  for (int x = 1; x <= 4; ++x)
    for (double r : res.full.grid) {
      double a = psi_conditional(res.models, r, 0.6, level(x));
      double b = psi_conditional(res.models, r, 0.45, level(x)) / psi_conditional(res.models, 0.6, 0.45, level(x));
      rebase = std::max(rebase, std::abs(a - b));
    }

  bool same = true;
  std::size_t compared = 0;
  for (auto scope : {CrrScope::precinct, CrrScope::pooled, CrrScope::citywide}) {
    CrrOptions c;
    c.scope = scope;
    c.B = 10;
    c.variants = {"mobility", "census"};
    auto est = estimate_crr(admin, sim.schema, sim.mobility(), c);
    for (std::size_t k = 0; k + 1 < est.size(); k += 2) {
      auto eq = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
      same = same && eq(est[k].value, est[k + 1].value) && eq(est[k].lo, est[k + 1].lo) && eq(est[k].hi, est[k + 1].hi);
      ++compared;
    }
  }

  DgpSpec tw;
  tw.name = "benchmark_appH";
  tw.n = 100000;
  auto twin = generate(tw);
  auto rows = outcome_rows(twin.table, twin.schema);
  auto xi = xi_outcome_ratio(rows.base, rows.r, rows.y, Eigen::MatrixXd::Zero(rows.base.rows(), 0), 0.6, 0.0);
  double nest = std::max(std::abs(xi.xi.maxCoeff() - 1.0), std::abs(xi.xi.minCoeff() - 1.0));

  bool ok = base_one && rebase <= 1e-10 && same && compared > 0 && nest <= 1e-12;
  report(5, "algebraic invariants", ok,
         fmt("psi_bar(r0) == 1 %s; max rebasing gap %.2e; identity-flow mobility == census %s over %zu estimates; "
             "nested xi-tilde max |xi - 1| %.2e",
             base_one ? "yes" : "no", rebase, same ? "bitwise" : "differs", compared, nest));
}

void numerics()
{
  double lg = checks::logistic_gradient_error(31, 10);
  double bg = checks::beta_gradient_error(32, 10);
  double kd = checks::kde_integral_error(33);
  double ol = checks::ols_orthogonality(34);
  bool ok = lg <= 1e-4 && bg <= 1e-4 && kd <= 1e-3 && ol <= 1e-8;
  report(6, "numerical correctness", ok,
         fmt("logistic gradient rel err %.2e; beta score/Hessian rel err %.2e; worst KDE mass error %.2e; "
             "max |X'e|/n %.2e",
             lg, bg, kd, ol));
}

void no_bias()
{
  DgpSpec sp;
  sp.name = "benchmark_appH";
  sp.n = 500000;
  sp.seed = 1;
  auto sim = generate(sp);
  auto o = outcome_rows(sim.table, sim.schema);
  std::vector<double> rs;
  for (std::size_t i = 0; i < sim.table.n(); ++i)
    if (sim.table.m[i])
      rs.push_back((*sim.table.r)[i]);
  Eigen::VectorXd rv = Eigen::Map<Eigen::VectorXd>(rs.data(), static_cast<Eigen::Index>(rs.size()));
  auto t = tally(rv, Eigen::VectorXd::Ones(rv.size()));
  double r = weighted_quantile(t, 0.25), r0 = weighted_quantile(t, 0.75);
  Eigen::MatrixXd xj = o.base.col(1);
  Eigen::MatrixXd ctrl = o.base.col(0);
  double sy = partial_r2(o.y, xj, detail::hcat(ctrl, o.r));
  double sr = partial_r2(o.r, xj, ctrl);
  double worst_y = 0.0, worst_r = 0.0;
  for (int s : {1, -1}) {
    auto uy = construct_confounder(o.base, o.r, o.y, {sy, 0.0, s, 1, 1.0}, 7);
    worst_y = std::max(worst_y, std::abs(xi_outcome_ratio(o.base, o.r, o.y, uy, r, r0).mean - 1.0));
    auto ur = construct_confounder(o.base, o.r, o.y, {0.0, sr, 1, s, 1.0}, 7);
    worst_r = std::max(worst_r, std::abs(xi_outcome_ratio(o.base, o.r, o.y, ur, r, r0).mean - 1.0));
  }
  report(7, "no-bias conditions (n=500000)", worst_y <= 0.01 && worst_r <= 0.01,
         fmt("u tied to Y only (partial R2 %.3f): max |E xi - 1| %.4f; u tied to R only (partial R2 %.3f): %.4f", sy,
             worst_y, sr, worst_r));
}

void monotone()
{
  std::size_t viol[2];
  std::size_t points = 0;
  for (int k = 0; k < 2; ++k) {
    DgpSpec sp;
    sp.name = "monotone";
    sp.slope_sign = k == 0 ? 1 : -1;
    sp.seed = 5;
    auto sim = generate(sp);
    auto data = prepare_rap_data(sim.table.stopped(), sim.mobility());
    RapOptions o;
    o.B = 0;
    auto res = estimate_rap(data, sim.schema, o, false);
    auto b = monotone_bound_check(res.full, res.naive, 0.02);
    viol[k] = b.violations;
    points = b.grid.size();
  }
  report(8, "monotone bound direction", viol[0] == 0 && viol[1] > 0,
         fmt("decreasing stop probability: %zu/%zu violations; reversed process: %zu flagged", viol[0], points,
             viol[1]));
}

int sh_env(const std::string& env, const std::string& args)
{
  std::string cmd = env + " " + std::string(RAP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

int sh(const std::string& args)
{
  return sh_env("env -u RAP_THREADS", args);
}

void determinism()
{
  auto root = testutil::temp_dir("accept_det");
  auto s = root.string();
  if (sh("simulate --n 30000 --seed 4 --out " + s + "/data") != 0 ||
      sh("simulate --dgp benchmark_appH --n 20000 --seed 4 --out " + s + "/twin") != 0) {
    report(9, "CLI determinism", false, "could not create inputs");
    return;
  }
  std::string in = " --encounters " + s + "/data/admin.csv --flows " + s + "/data/flows.csv --residential " + s +
                   "/data/residential.csv --categorical x";
  std::vector<std::pair<std::string, std::string>> runs{
      {"simulate", "simulate --dgp scenario2 --n 20000"},
      {"crr", "crr" + in + " --B 24"},
      {"crr-city", "crr" + in + " --B 24 --scope citywide"},
      {"rap", "rap" + in + " --B 24"},
      {"bounds", "bounds" + in + " --B 12 --sd_xi 0.1 --cap 3000"},
      {"sens-contour", "sens-contour --resolution 11"},
      {"benchmark", "benchmark --encounters " + s + "/twin/full.csv --r 0.6 --r0 0 --K 1,2"},
      {"study", "study --reps 6 --n 20000"},
      {"study-sweep", "study --kind sweep --n 50000"},
      {"study-bench", "study --kind benchmark --n 20000"},
  };
  std::size_t files = 0;
  std::vector<std::string> diffs;
  for (const auto& [tag, cmd] : runs) {
    auto a = root / (tag + "_t1"), b = root / (tag + "_t4"), c = root / (tag + "_env");
    int ra = sh(cmd + " --threads 1 --out " + a.string());
    int rb = sh(cmd + " --threads 4 --out " + b.string());
    int rc = sh_env("RAP_THREADS=3", cmd + " --out " + c.string());
    if (ra || rb || rc) {
      diffs.push_back(tag + " (exit status)");
      continue;
    }
    for (const auto& e : std::filesystem::directory_iterator(a)) {
      auto name = e.path().filename();
      ++files;
      auto body = testutil::slurp(e.path());
      if (body != testutil::slurp(b / name) || body != testutil::slurp(c / name))
        diffs.push_back(tag + "/" + name.string());
    }
  }
  std::string detail = fmt("%zu commands, %zu files compared across 1, 4 and RAP_THREADS=3 workers", runs.size(), files);
  for (const auto& d : diffs)
    detail += "; differs: " + d;
  report(9, "CLI determinism", diffs.empty() && files > 0, detail);
  std::filesystem::remove_all(root);
}

}  // namespace

int main()
{
  auto t0 = std::chrono::steady_clock::now();
  guarded(1, "table-1 study", study_table);
  guarded(2, "twin benchmark", twin_benchmark);
  guarded(3, "covariate-shift LP", lp_oracle);
  guarded(4, "closed-form truth", closed_form_truth);
  guarded(5, "algebraic invariants", invariants);
  guarded(6, "numerical correctness", numerics);
  guarded(7, "no-bias conditions", no_bias);
  guarded(8, "monotone bounds", monotone);
  guarded(9, "CLI determinism", determinism);
  std::printf("%d of 9 criteria failed (%.0fs)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
