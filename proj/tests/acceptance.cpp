// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
//
//   acceptance [--config FILE] [--out DIR]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "metric_oracles.hpp"
#include "mofit/gradcheck.hpp"
#include "mofit/pipeline.hpp"

#ifndef MOFIT_SOURCE_DIR
#define MOFIT_SOURCE_DIR "."
#endif

namespace {

using namespace mofit;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  std::ostringstream o;
  o.precision(6);
  o << std::scientific << v;
  return o.str();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o.precision(prec);
  o << std::fixed << v;
  return o.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Verdict& v) {
  if (!v.pass) ++failures;
  std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str());
  std::fflush(stdout);
}

// Runs `fn`; an exception fails the criterion instead of aborting the run.
void check(int id, const std::string& name, const std::function<Verdict()>& fn) {
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {false, std::string("error: ") + e.what()};
  }
  report(id, name, v);
}

// ---------------------------------------------------------------------------
// 1

Verdict gradient_correctness(const Json& cfg) {
  const auto t0 = Clock::now();
  const auto rows = run_gradcheck(arch_config(cfg), schedule_config(cfg), 20, cfg_get<int>(cfg, "gradcheck", "probes"),
                                  cfg_get<double>(cfg, "gradcheck", "h"), master_seed(cfg));
  std::map<Wrt, double> worst;
  const GradCheckResult* worst_row = nullptr;
  for (const auto& r : rows) {
    worst[r.wrt] = std::max(worst[r.wrt], r.result.max_relative_error);
    if (!worst_row || r.result.max_relative_error > worst_row->max_relative_error) worst_row = &r.result;
  }
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0 && rows.size() == 60;
  std::string d;
  for (const auto& [w, e] : worst) {
    ok = ok && e < 1e-6;
    d += std::string(to_string(w)) + " " + std::to_string(e) + ", ";
  }
  if (worst_row)
    d += "worst probe analytic " + sci(worst_row->analytic_at_worst) + " numeric " +
         sci(worst_row->numeric_at_worst) + ", ";
  return {ok, "max relative error " + d + "20 models, " + fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------------------
// 2

Verdict metric_equivalence() {
  const auto t0 = Clock::now();
  double e_auc = 0, e_asr = 0, e_tpr = 0, e_ks = 0;
  std::uint64_t seed = 0;
  for (int nm : {1, 5, 40, 150})
    for (int nh : {1, 7, 40, 150})
      for (bool ties : {false, true})
        for (double shift : {0.0, 0.8}) {
          const auto t = oracle::random_table(++seed, nm, nh, shift, ties);
          e_auc = std::max(e_auc, std::abs(auc(t.s, t.l, Orientation::member_high) - oracle::brute_auc(t.s, t.l)));
          e_asr = std::max(e_asr, std::abs(asr(t.s, t.l, Orientation::member_high) - oracle::brute_asr(t.s, t.l)));
          for (double cap : {0.0, 0.01, 0.1, 0.5})
            e_tpr = std::max(e_tpr, std::abs(tpr_at_fpr(t.s, t.l, Orientation::member_high, cap) -
                                             oracle::brute_tpr(t.s, t.l, cap)));
          std::vector<double> a, b;
          for (std::size_t i = 0; i < t.s.size(); ++i) (t.l[i] == Split::member ? a : b).push_back(t.s[i]);
          e_ks = std::max(e_ks, std::abs(ks_statistic(a, b) - oracle::brute_ks(a, b)));
        }
  const auto r5 = robust_scale(std::vector<double>{1, 2, 3, 4, 5});
  const auto rc = robust_scale(std::vector<double>{4, 4, 4, 4});
  const bool robust_ok = !r5.degenerate && r5.values.back() == 1.0 && rc.degenerate &&
                         rc.values == std::vector<double>(4, 0.0);
  double e_kl = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto a = oracle::normal_sample(100 + s, 20, 0.0, 1.0);
    const auto b = oracle::normal_sample(200 + s, 25, 0.4 * double(s), 1.0 + 0.2 * double(s));
    e_kl = std::max(e_kl, std::abs(kl_divergence_kde(a, b) - oracle::fine_grid_kl(a, b)));
  }
  const double secs = seconds_since(t0);
  const bool ok = e_auc <= 1e-12 && e_asr <= 1e-12 && e_tpr <= 1e-12 && e_ks <= 1e-12 && robust_ok && e_kl < 1e-3 &&
                  secs < 60.0;
  std::ostringstream d;
  d << "max |diff| auc " << e_auc << ", asr " << e_asr << ", tpr@fpr " << e_tpr << ", ks " << e_ks << ", kl " << e_kl
    << "; robust scale hand cases " << (robust_ok ? "ok" : "wrong") << ", " << fmt(secs, 1) << " s";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// toy run

struct ToyRun {
  Json cfg;
  std::vector<double> loss_curve;
  std::vector<Sample> samples;
  std::vector<AttackRecord> records;
  Json report;
  double seconds = 0.0;
};

ToyRun run_pipeline(const Json& cfg) {
  ToyRun r;
  r.cfg = cfg;
  const auto t0 = Clock::now();
  r.samples = cmd_synth(cfg);
  r.loss_curve = cmd_train(cfg).loss_curve;
  r.records = cmd_attack(cfg).records;
  r.report = cmd_eval(cfg).report;
  r.seconds = seconds_since(t0);
  return r;
}

const Json& method(const Json& rep, const std::string& name) {
  for (const auto& m : rep.at("methods"))
    if (m.at("method") == name) return m;
  throw std::runtime_error("report lacks method " + name);
}

Verdict separability(const ToyRun& run) {
  const double gt = method(run.report, "clid_gt").at("auc");
  const double ap = method(run.report, "clid_approx").at("auc");
  const double mf = method(run.report, "mofit").at("auc");
  const bool ok = gt >= 0.90 && ap <= gt - 0.05 && mf >= ap + 0.03 && run.seconds < 1800.0 &&
                  run.report.at("failed_rows") == 0;
  return {ok, "AUC clid_gt " + fmt(gt) + " (>= 0.90), clid_approx " + fmt(ap) + " (<= " + fmt(gt - 0.05) +
                  "), mofit " + fmt(mf) + " (>= " + fmt(ap + 0.03) + "); failed rows " +
                  run.report.at("failed_rows").dump() + "; pipeline " + fmt(run.seconds, 0) + " s"};
}

Verdict sensitivity(const ToyRun& run) {
  const Json& s = run.report.at("sensitivity");
  const double ks_m = s.at("member").at("ks"), ks_h = s.at("holdout").at("ks");
  const double d_m = s.at("member").at("mean_delta_l_cond"), d_h = s.at("holdout").at("mean_delta_l_cond");
  return {ks_m > ks_h && d_m > d_h, "KS member " + fmt(ks_m) + " vs hold-out " + fmt(ks_h) +
                                        "; mean dL_cond member " + fmt(d_m, 6) + " vs hold-out " + fmt(d_h, 6)};
}

Verdict surrogate_overfit(const ToyRun& run) {
  const Json& o = run.report.at("overfitting");
  bool ok = true;
  std::string d;
  for (const char* g : {"member", "holdout"}) {
    const double xs = o.at(g).at("median_l_uncond_xstar"), x0 = o.at(g).at("median_l_uncond_x0");
    ok = ok && xs < x0;
    d += std::string(g) + " median L_uncond x* " + fmt(xs, 5) + " vs x0 " + fmt(x0, 5) + "; ";
  }
  const double vs = o.at("var_l_cond_xstar_phistar"), v0 = o.at("var_l_cond_x0_gt");
  ok = ok && vs < v0;
  return {ok, d + "var L_cond(x*, phi*) " + fmt(vs, 8) + " vs L_cond(x0, c_gt) " + fmt(v0, 8)};
}

template <class O>
Verdict early_stopping(const O& oracle, const ToyRun& run, RecordSink& sink) {
  AttackSuiteConfig sc = suite_config(run.cfg);
  const auto fractions = cfg_get<std::vector<double>>(run.cfg, "early_stop", "fractions");
  const auto rows = run_early_stop_sweep(oracle, run.samples, sc, run.records, fractions, &sink);
  const double full = mofit_auc(run.records);
  bool ok = rows.size() == 3;
  std::string d = "mean iterations";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) ok = ok && rows[i].mean_iterations < rows[i - 1].mean_iterations;
    d += " " + fmt(rows[i].mean_iterations, 1) + " (threshold " + fmt(rows[i].threshold, 5) + ")";
  }
  ok = ok && rows[0].fraction < rows[1].fraction && rows[1].fraction < rows[2].fraction;
  const double loosest = rows.back().auc;
  ok = ok && std::abs(loosest - full) <= 0.10;
  return {ok, d + "; AUC loosest " + fmt(loosest) + " vs full " + fmt(full)};
}

template <class O>
Verdict stability(const O& oracle, const ToyRun& run, RecordSink& sink) {
  AttackSuiteConfig sc = suite_config(run.cfg);
  auto seeds = cfg_get<std::vector<std::uint64_t>>(run.cfg, "stability", "eps_seeds");
  std::vector<StabilityRow> rows;
  std::vector<std::uint64_t> rest;
  for (auto s : seeds) {
    if (s == sc.surrogate.eps_seed)
      rows.push_back({s, mofit_auc(run.records), 0.0});
    else
      rest.push_back(s);
  }
  for (const auto& r : run_stability(oracle, run.samples, sc, rest, &sink)) rows.push_back(r);
  const double sd = auc_spread(rows);
  std::string d = "AUC per eps seed";
  for (const auto& r : rows) d += " " + std::to_string(r.eps_seed) + ":" + fmt(r.auc);
  return {rows.size() == 4 && sd < 0.05, d + "; std " + fmt(sd)};
}

template <class O>
Verdict ablation(const O& oracle, const ToyRun& run, RecordSink& sink) {
  const auto eps = cfg_get<std::vector<double>>(run.cfg, "ablate", "eps_noise");
  const auto rows = run_ablation(oracle, run.samples, suite_config(run.cfg), eps, &run.records, &sink);
  double fitted = -1, dmax = -1, best_rand = -1, best_eps = 0;
  for (const auto& r : rows) {
    if (r.mode == "model_fitted") fitted = r.auc;
    if (r.mode == "delta_max") dmax = r.auc;
    if (r.mode == "random_delta" && r.auc > best_rand) best_rand = r.auc, best_eps = r.eps_noise;
  }
  return {fitted >= best_rand && fitted >= dmax, "AUC model_fitted " + fmt(fitted) + ", random delta " +
                                                     fmt(best_rand) + " (best eps " + fmt(best_eps, 2) +
                                                     "), delta_max " + fmt(dmax)};
}

Verdict determinism(const Json& cfg) {
  Json again = cfg;
  again["output_dir"] = (fs::path(cfg.at("output_dir").get<std::string>()).parent_path() / "toy_repeat").string();
  fs::remove_all(again["output_dir"].get<std::string>());
  const ToyRun second = run_pipeline(again);
  const std::string a = read_file(RunPaths(cfg).attack_csv()), b = read_file(RunPaths(again).attack_csv());
  const std::string ca = read_file(RunPaths(cfg).checkpoint()), cb = read_file(RunPaths(again).checkpoint());
  return {a == b && ca == cb, "attack CSV " + std::to_string(a.size()) + " bytes " +
                                  (a == b ? "identical" : "DIFFERENT") + ", checkpoint " +
                                  (ca == cb ? "identical" : "DIFFERENT") + " across two full runs"};
}

Verdict fusion_dominance(const Json& cfg, const Json& main_report, const RecordSink& suites) {
  std::size_t reports = 0, held = 0;
  double worst_margin = 1e300;
  auto one = [&](const Json& rep) {
    const Json& f = rep.at("fusion");
    ++reports;
    if (f.at("dominance").get<bool>()) ++held;
    const double best = method(rep, "mofit_fused").at("asr");
    worst_margin = std::min(worst_margin, best - std::max(f.at("asr_gamma0").get<double>(),
                                                          f.at("asr_gamma1").get<double>()));
  };
  one(main_report);
  for (const auto& recs : suites) one(evaluate_records(to_table(recs), cfg).report);
  return {held == reports, std::to_string(held) + "/" + std::to_string(reports) +
                               " reports dominate; smallest margin " + fmt(worst_margin)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string config_file = std::string(MOFIT_SOURCE_DIR) + "/configs/toy_reference.json";
  std::string out = "acceptance_runs";
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string k = argv[i];
    if (k == "--config") config_file = argv[i + 1];
    else if (k == "--out") out = argv[i + 1];
    else {
      std::cerr << "usage: acceptance [--config FILE] [--out DIR]\n";
      return 2;
    }
  }
  Json cfg;
  try {
    cfg = load_config(config_file, {});
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << config_file << ": " << e.what() << "\n";
    return 2;
  }
  cfg["output_dir"] = (fs::path(out) / "toy").string();
  fs::remove_all(cfg["output_dir"].get<std::string>());
  std::cout << "config " << config_file << " (" << config_hash(cfg) << "), output " << out << "\n";

  check(1, "gradient correctness", [&] { return gradient_correctness(cfg); });
  check(2, "metric oracle equivalence", [] { return metric_equivalence(); });

  std::optional<ToyRun> toy;
  try {
    toy = run_pipeline(cfg);
  } catch (const std::exception& e) {
    for (int id = 3; id <= 10; ++id) report(id, "toy run", {false, std::string("pipeline failed: ") + e.what()});
    std::printf("%d criteria failed\n", failures);
    return 1;
  }
  const ToyRun& run = *toy;
  const auto& curve = run.loss_curve;
  const std::size_t tenth = std::max<std::size_t>(1, curve.size() / 10);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < tenth; ++i) head += curve[i], tail += curve[curve.size() - 1 - i];
  std::cout << "toy run: " << run.samples.size() << " samples, " << curve.size() << " steps, training loss "
            << fmt(head / double(tenth)) << " -> " << fmt(tail / double(tenth)) << ", " << fmt(run.seconds, 0)
            << " s\n";

  check(3, "separability ordering", [&] { return separability(run); });
  check(4, "sensitivity asymmetry", [&] { return sensitivity(run); });
  check(5, "surrogate overfitting", [&] { return surrogate_overfit(run); });

  RecordSink suites;
  {
    const DenoiserModel model = load_run_model(cfg);
    const LocalOracle oracle(model, schedule_config(cfg));
    check(6, "early-stopping monotonicity", [&] { return early_stopping(oracle, run, suites); });
    check(7, "random eps stability", [&] { return stability(oracle, run, suites); });
    check(8, "ablation ordering", [&] { return ablation(oracle, run, suites); });
  }
  check(9, "determinism", [&] { return determinism(cfg); });
  check(10, "fusion dominance", [&] { return fusion_dominance(cfg, run.report, suites); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
