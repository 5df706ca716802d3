#pragma once

// Experiment pipelines behind the CLI. Each command reads the resolved config,
// writes its outputs under output_dir atomically, and stamps them with the
// config hash and build id.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "mofit/attacks.hpp"
#include "mofit/config.hpp"
#include "mofit/gradcheck.hpp"
#include "mofit/io.hpp"
#include "mofit/metrics.hpp"
#include "mofit/protocol.hpp"
#include "mofit/synthdata.hpp"
#include "mofit/trainer.hpp"

namespace mofit {

struct RunPaths {
  fs::path root;

  explicit RunPaths(const Json& cfg) : root(cfg.at("output_dir").get<std::string>()) {}
  explicit RunPaths(fs::path r) : root(std::move(r)) {}

  fs::path dataset_dir() const { return root / "dataset"; }
  fs::path checkpoint() const { return root / "model.ckpt"; }
  fs::path loss_curve() const { return root / "loss_curve.csv"; }
  fs::path attack_csv() const { return root / "attack.csv"; }
  fs::path traces_csv() const { return root / "traces.csv"; }
  fs::path report() const { return root / "report.json"; }
  fs::path resolved_config() const { return root / "config.resolved.json"; }
};

inline Json stamp(const Json& cfg) { return {{"config_hash", config_hash(cfg)}, {"build", build_id()}}; }

inline void write_resolved_config(const Json& cfg) {
  atomic_write(RunPaths(cfg).resolved_config(), serialize_config(cfg));
}

inline void write_json(const fs::path& p, const Json& j) { atomic_write(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// synth / train

inline std::vector<Sample> cmd_synth(const Json& cfg) {
  const RunPaths paths(cfg);
  write_resolved_config(cfg);
  const DatasetConfig dc = dataset_config(cfg);
  auto samples = generate_dataset(dc);
  save_dataset(paths.dataset_dir(), dc, samples, stamp(cfg));
  return samples;
}

inline std::vector<Sample> load_run_dataset(const Json& cfg) {
  LoadedDataset d = load_dataset(RunPaths(cfg).dataset_dir());
  const DatasetConfig want = dataset_config(cfg);
  if (!(d.config == want))
    throw ConfigError("dataset in '" + RunPaths(cfg).dataset_dir().string() +
                      "' was made with a different dataset config; rerun `mofit synth`");
  return std::move(d.samples);
}

inline TrainResult cmd_train(const Json& cfg) {
  const RunPaths paths(cfg);
  write_resolved_config(cfg);
  const auto samples = load_run_dataset(cfg);
  const auto members = select_split(samples, Split::member);
  const NoiseSchedule sched = schedule_config(cfg);
  const TrainConfig tc = train_config(cfg);
  DenoiserModel init = DenoiserModel::random(arch_config(cfg), master_seed(cfg));
  TrainResult res = train(std::move(init), members, sched, tc);
  Json meta = stamp(cfg);
  meta["schedule"] = cfg.at("schedule");
  meta["train"] = cfg.at("train");
  save_checkpoint(paths.checkpoint(), res.model, meta);
  atomic_write(paths.loss_curve(), loss_curve_csv(res.loss_curve, provenance_line(cfg)));
  return res;
}

inline DenoiserModel load_run_model(const Json& cfg) {
  LoadedCheckpoint ck = load_checkpoint(RunPaths(cfg).checkpoint());
  const Arch want = arch_config(cfg);
  const Arch& got = ck.model.arch();
  if (!(got.shape == want.shape) || got.hidden != want.hidden || got.time_dim != want.time_dim ||
      got.cond_dim != want.cond_dim)
    throw ConfigError("checkpoint '" + RunPaths(cfg).checkpoint().string() +
                      "' does not match the configured architecture; rerun `mofit train`");
  return std::move(ck.model);
}

/// Runs `fn` against the configured oracle: the remote endpoint when one is
/// set, otherwise the run's checkpoint in process.
template <class F>
decltype(auto) with_oracle(const Json& cfg, F&& fn) {
  const std::string endpoint = cfg_get<std::string>(cfg, "oracle", "endpoint");
  if (!endpoint.empty()) {
    RemoteOptions opt;
    opt.retries = cfg_get<int>(cfg, "oracle", "retries");
    opt.max_in_flight = cfg_get<int>(cfg, "oracle", "max_in_flight");
    RemoteOracle remote(wire::parse_endpoint(endpoint), opt);
    return fn(remote);
  }
  const DenoiserModel model = load_run_model(cfg);
  LocalOracle local(model, schedule_config(cfg));
  return fn(local);
}

// ---------------------------------------------------------------------------
// attack

struct AttackOutcome {
  std::vector<AttackRecord> records;
  std::size_t failures = 0;
  std::size_t numerical_failures = 0;
};

inline AttackOutcome summarize(std::vector<AttackRecord> records) {
  AttackOutcome o{std::move(records), 0, 0};
  for (const auto& r : o.records)
    if (!r.ok()) {
      ++o.failures;
      if (r.numerical_failure) ++o.numerical_failures;
    }
  return o;
}

inline AttackOutcome cmd_attack(const Json& cfg) {
  const RunPaths paths(cfg);
  write_resolved_config(cfg);
  const auto samples = load_run_dataset(cfg);
  const AttackSuiteConfig sc = suite_config(cfg);
  if (cfg_get<std::string>(cfg, "oracle", "endpoint").empty() && !fs::exists(paths.checkpoint()))
    throw ConfigError("missing input file '" + paths.checkpoint().string() + "' (produce it with `mofit train` first)");
  auto records = with_oracle(cfg, [&](const auto& oracle) { return run_attack_suite(oracle, samples, sc); });
  atomic_write(paths.attack_csv(), records_to_csv(records, provenance_line(cfg)));
  if (cfg_get<bool>(cfg, "attack", "write_traces"))
    atomic_write(paths.traces_csv(), traces_csv(records, provenance_line(cfg)));
  for (const auto& r : records)
    if (!r.ok()) std::cerr << "sample " << r.sample_id << " failed: " << *r.error << "\n";
  return summarize(std::move(records));
}

// ---------------------------------------------------------------------------
// eval

/// Rows whose listed columns are all present.
inline ScoreTable score_table(const RecordTable& t, const std::vector<std::string>& columns) {
  ScoreTable s;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    bool complete = true;
    for (const auto& c : columns) {
      auto it = t.cells.find(c);
      if (it == t.cells.end()) throw ConfigError("attack CSV lacks column '" + c + "'");
      complete = complete && it->second[i].has_value();
    }
    if (!complete) continue;
    s.ids.push_back(t.ids[i]);
    s.labels.push_back(t.labels[i]);
    for (const auto& c : columns) s.columns[c].push_back(*t.cells.at(c)[i]);
  }
  return s;
}

inline bool column_present(const RecordTable& t, const std::string& c) {
  auto it = t.cells.find(c);
  if (it == t.cells.end()) return false;
  for (const auto& v : it->second)
    if (v) return true;
  return false;
}

inline std::vector<double> by_label(const std::vector<double>& v, const std::vector<Split>& labels, Split want) {
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (labels[i] == want) out.push_back(v[i]);
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

/// Sample variance (n - 1 denominator).
inline double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / double(v.size() - 1);
}

struct MethodSpec {
  std::string name;
  std::string column;
  Orientation orientation;
};

inline Json method_report(const std::string& name, const std::vector<double>& scores, const std::vector<Split>& labels,
                          Orientation o, double fpr_cap, int grid_points) {
  const ThresholdChoice best = asr_with_threshold(scores, labels, o);
  const auto m = by_label(scores, labels, Split::member);
  const auto h = by_label(scores, labels, Split::holdout);
  return {{"method", name},
          {"orientation", to_string(o)},
          {"asr", best.value},
          {"auc", auc(scores, labels, o)},
          {"tpr_at_1fpr", tpr_at_fpr(scores, labels, o, fpr_cap)},
          {"ks_member_vs_holdout", ks_statistic(m, h)},
          {"kl_member_vs_holdout", kl_divergence_kde(m, h, grid_points)},
          {"gamma_star", nullptr},
          {"tau_star", std::isfinite(best.tau) ? Json(best.tau) : Json(best.tau > 0 ? "inf" : "-inf")},
          {"degenerate_flags", Json::array()}};
}

inline std::string kde_csv(const PairedKde& k, const char* col_a, const char* col_b, const std::string& comment) {
  std::string out = "# " + comment + "\n";
  out += std::string("x,") + col_a + "," + col_b + "\n";
  for (std::size_t i = 0; i < k.grid.size(); ++i)
    out += format_double(k.grid[i]) + "," + format_double(k.density_a[i]) + "," + format_double(k.density_b[i]) + "\n";
  return out;
}

/// Throws NumericalError naming the first non-finite number in `j`.
inline void require_finite_json(const Json& j, const std::string& path = "report") {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) throw NumericalError("non-finite value at " + path);
  if (j.is_object())
    for (auto it = j.begin(); it != j.end(); ++it) require_finite_json(it.value(), path + "." + it.key());
  if (j.is_array())
    for (std::size_t i = 0; i < j.size(); ++i) require_finite_json(j[i], path + "[" + std::to_string(i) + "]");
}

struct EvalOutput {
  Json report;
  std::map<std::string, std::string> kde_files;  // file name -> CSV text
};

/// Builds the report from parsed attack records; nothing is written.
inline EvalOutput evaluate_records(const RecordTable& t, const Json& cfg) {
  const double fpr_cap = cfg_get<double>(cfg, "metrics", "fpr_cap");
  const int grid = cfg_get<int>(cfg, "metrics", "kde_grid_points");
  const FusionConfig fc = fusion_config(cfg);
  const std::string prov = provenance_line(cfg);

  EvalOutput out;
  Json& rep = out.report;
  rep["provenance"] = stamp(cfg);
  std::size_t failed = 0;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    auto it = t.cells.find("score_mofit");
    if (it == t.cells.end() || !it->second[i]) ++failed;
  }
  rep["rows"] = t.ids.size();
  rep["failed_rows"] = failed;

  std::vector<MethodSpec> methods{{"mofit", "score_mofit", Orientation::member_high}};
  if (column_present(t, "score_clid_gt")) methods.push_back({"clid_gt", "score_clid_gt", Orientation::member_low});
  methods.push_back({"clid_approx", "score_clid_approx", Orientation::member_low});
  methods.push_back({"loss", "score_loss", Orientation::member_low});

  Json list = Json::array();
  for (const auto& m : methods) {
    const ScoreTable st = score_table(t, {m.column});
    const auto& s = st.column(m.column);
    list.push_back(method_report(m.name, s, st.labels, m.orientation, fpr_cap, grid));
    const auto k = paired_kde(by_label(s, st.labels, Split::member), by_label(s, st.labels, Split::holdout), grid);
    out.kde_files["kde_" + m.name + ".csv"] = kde_csv(k, "density_member", "density_holdout", prov);
  }

  // fused MoFit score
  {
    const ScoreTable st = score_table(t, {fc.score_column, fc.aux_column});
    const FusionResult fr = fuse_and_decide(st, fc);
    Json fm = method_report("mofit_fused", fr.fused, st.labels, Orientation::member_high, fpr_cap, grid);
    fm["asr"] = fr.best_asr;
    fm["gamma_star"] = fr.best_gamma;
    fm["tau_star"] = std::isfinite(fr.best_tau) ? Json(fr.best_tau) : Json(fr.best_tau > 0 ? "inf" : "-inf");
    fm["degenerate_flags"] = fr.degenerate_flags;
    fm["aux_column"] = fc.aux_column;
    list.push_back(fm);
    const double endpoints = std::max(fr.asr_per_gamma.front(), fr.asr_per_gamma.back());
    rep["fusion"] = {{"gammas", fr.gammas},
                     {"asr_per_gamma", fr.asr_per_gamma},
                     {"asr_gamma0", fr.asr_per_gamma.front()},
                     {"asr_gamma1", fr.asr_per_gamma.back()},
                     {"dominance", fr.best_asr >= endpoints}};
    const auto k = paired_kde(by_label(fr.fused, st.labels, Split::member),
                              by_label(fr.fused, st.labels, Split::holdout), grid);
    out.kde_files["kde_mofit_fused.csv"] = kde_csv(k, "density_member", "density_holdout", prov);
  }
  rep["methods"] = list;

  // conditioning sensitivity: L_cond under ground-truth vs approximate conditions
  if (column_present(t, "l_cond_gt")) {
    const ScoreTable st = score_table(t, {"l_cond_gt", "l_cond_approx"});
    Json sens;
    sens["kl_direction"] = "KL(ground_truth || approximate) within each split";
    for (Split g : {Split::member, Split::holdout}) {
      const auto gt = by_label(st.column("l_cond_gt"), st.labels, g);
      const auto ap = by_label(st.column("l_cond_approx"), st.labels, g);
      if (gt.empty()) continue;
      std::vector<double> delta(gt.size());
      for (std::size_t i = 0; i < gt.size(); ++i) delta[i] = ap[i] - gt[i];
      sens[to_string(g)] = {{"ks", ks_statistic(gt, ap)},
                            {"kl", kl_divergence_kde(gt, ap, grid)},
                            {"mean_delta_l_cond", mean_of(delta)},
                            {"mean_l_cond_gt", mean_of(gt)},
                            {"mean_l_cond_approx", mean_of(ap)}};
      out.kde_files[std::string("kde_sensitivity_") + to_string(g) + ".csv"] =
          kde_csv(paired_kde(gt, ap, grid), "density_gt", "density_approx", prov);
    }
    rep["sensitivity"] = sens;
  }

  // surrogate overfitting: losses at x* against those at the query x0
  {
    std::vector<std::string> cols{"l_uncond", "final_loss_surrogate", "final_loss_embed"};
    const bool gt = column_present(t, "l_cond_gt");
    if (gt) cols.push_back("l_cond_gt");
    const ScoreTable st = score_table(t, cols);
    Json of;
    for (Split g : {Split::member, Split::holdout}) {
      const auto x0 = by_label(st.column("l_uncond"), st.labels, g);
      const auto xs = by_label(st.column("final_loss_surrogate"), st.labels, g);
      if (x0.empty()) continue;
      of[to_string(g)] = {{"median_l_uncond_x0", median(x0)}, {"median_l_uncond_xstar", median(xs)}};
    }
    of["var_l_cond_xstar_phistar"] = variance_of(st.column("final_loss_embed"));
    if (gt) of["var_l_cond_x0_gt"] = variance_of(st.column("l_cond_gt"));
    rep["overfitting"] = of;
  }
  require_finite_json(rep);
  return out;
}

inline EvalOutput cmd_eval(const Json& cfg) {
  const RunPaths paths(cfg);
  const RecordTable t = parse_records_csv(read_file(paths.attack_csv(), "attack"));
  EvalOutput out = evaluate_records(t, cfg);
  for (const auto& [name, text] : out.kde_files) atomic_write(paths.root / name, text);
  write_json(paths.report(), out.report);
  return out;
}

inline RecordTable to_table(const std::vector<AttackRecord>& records) {
  return parse_records_csv(records_to_csv(records));
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckRow {
  int model = 0;
  Wrt wrt = Wrt::image;
  GradCheckResult result;
};

/// Random models of the configured architecture with random inputs; every
/// gradient target is probed on each.
inline std::vector<GradCheckRow> run_gradcheck(const Arch& arch, const NoiseSchedule& sched, int models, int probes,
                                               double h, std::uint64_t seed) {
  std::vector<GradCheckRow> rows;
  for (int m = 0; m < models; ++m) {
    const DenoiserModel model = DenoiserModel::random(arch, stream_seed(seed, Purpose::kModelInit, 1000 + m));
    Engine eng = make_engine(seed, Purpose::kEvalFit, std::uint64_t(m), 77);
    const Vector x = uniform_vector(eng, arch.image_size(), 0.0, 1.0);
    const Vector eps = standard_normal(eng, arch.image_size());
    Condition c;
    c.embedding = standard_normal(eng, arch.cond_dim);
    c.provenance = Provenance::approximate;
    const int t = std::uniform_int_distribution<int>(1, sched.steps())(eng);
    for (Wrt w : {Wrt::parameters, Wrt::image, Wrt::condition})
      rows.push_back({m, w, finite_diff_check(model, x, c, t, eps, sched, w, probes, h, std::uint64_t(m))});
  }
  return rows;
}

inline bool cmd_gradcheck(const Json& cfg) {
  const RunPaths paths(cfg);
  const int models = cfg_get<int>(cfg, "gradcheck", "models");
  const int probes = cfg_get<int>(cfg, "gradcheck", "probes");
  const double h = cfg_get<double>(cfg, "gradcheck", "h");
  const double tol = cfg_get<double>(cfg, "gradcheck", "tolerance");
  if (models < 1 || probes < 1 || !(h > 0.0)) throw ConfigError("gradcheck.models/probes/h must be positive");
  const auto rows = run_gradcheck(arch_config(cfg), schedule_config(cfg), models, probes, h, master_seed(cfg));
  Json rep;
  rep["provenance"] = stamp(cfg);
  rep["tolerance"] = tol;
  double worst = 0.0;
  Json list = Json::array();
  for (const auto& r : rows) {
    worst = std::max(worst, r.result.max_relative_error);
    list.push_back({{"model", r.model},
                    {"wrt", to_string(r.wrt)},
                    {"max_relative_error", r.result.max_relative_error},
                    {"worst_coordinate", r.result.worst_coordinate}});
  }
  rep["checks"] = list;
  rep["max_relative_error"] = worst;
  rep["pass"] = worst < tol;
  write_json(paths.root / "gradcheck.json", rep);
  return worst < tol;
}

// ---------------------------------------------------------------------------
// ablation / stability / early stopping

/// Receives the records of every suite a sweep runs, in run order.
using RecordSink = std::vector<std::vector<AttackRecord>>;

inline double mofit_auc(const std::vector<AttackRecord>& records) {
  const ScoreTable st = score_table(to_table(records), {"score_mofit"});
  return auc(st.column("score_mofit"), st.labels, Orientation::member_high);
}

struct AblationRow {
  std::string mode;
  double eps_noise = 0.0;
  double auc = 0.5;
  double asr = 0.5;
  double mean_surrogate_loss = 0.0;
};

template <LossOracle O>
std::vector<AblationRow> run_ablation(const O& oracle, const std::vector<Sample>& queries, AttackSuiteConfig sc,
                                      const std::vector<double>& eps_list,
                                      const std::vector<AttackRecord>* model_fitted_records = nullptr,
                                      RecordSink* sink = nullptr) {
  sc.use_ground_truth = false;
  auto row = [&](const std::string& name, double eps, const std::vector<AttackRecord>& recs) {
    const ScoreTable st = score_table(to_table(recs), {"score_mofit", "final_loss_surrogate"});
    return AblationRow{name, eps, auc(st.column("score_mofit"), st.labels, Orientation::member_high),
                       asr(st.column("score_mofit"), st.labels, Orientation::member_high),
                       mean_of(st.column("final_loss_surrogate"))};
  };
  std::vector<AblationRow> rows;
  auto run_variant = [&](SurrogateMode mode, double eps) {
    AttackSuiteConfig c = sc;
    c.variant = {mode, eps};
    auto recs = run_attack_suite(oracle, queries, c);
    if (sink) sink->push_back(recs);
    return recs;
  };
  rows.push_back(row("clean", 0.0, run_variant(SurrogateMode::random_uniform, 0.0)));
  for (double e : eps_list) rows.push_back(row("random_delta", e, run_variant(SurrogateMode::random_uniform, e)));
  rows.push_back(row("delta_max", 0.0, run_variant(SurrogateMode::adversarial_max, 0.0)));
  if (model_fitted_records)
    rows.push_back(row("model_fitted", 0.0, *model_fitted_records));
  else
    rows.push_back(row("model_fitted", 0.0, run_variant(SurrogateMode::model_fitted, 0.0)));
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& comment) {
  std::string out = "# " + comment + "\nmode,eps_noise,auc,asr,mean_surrogate_loss\n";
  for (const auto& r : rows)
    out += r.mode + "," + format_double(r.eps_noise) + "," + format_double(r.auc) + "," + format_double(r.asr) + "," +
           format_double(r.mean_surrogate_loss) + "\n";
  return out;
}

inline std::vector<AblationRow> cmd_ablate(const Json& cfg) {
  const RunPaths paths(cfg);
  const auto samples = load_run_dataset(cfg);
  const auto eps_list = cfg_get<std::vector<double>>(cfg, "ablate", "eps_noise");
  auto rows = with_oracle(cfg, [&](const auto& o) { return run_ablation(o, samples, suite_config(cfg), eps_list); });
  atomic_write(paths.root / "ablation.csv", ablation_csv(rows, provenance_line(cfg)));
  return rows;
}

struct StabilityRow {
  std::uint64_t eps_seed = 0;
  double auc = 0.5;
  double asr = 0.5;
};

template <LossOracle O>
std::vector<StabilityRow> run_stability(const O& oracle, const std::vector<Sample>& queries, AttackSuiteConfig sc,
                                        const std::vector<std::uint64_t>& seeds, RecordSink* sink = nullptr) {
  sc.use_ground_truth = false;
  std::vector<StabilityRow> rows;
  for (auto s : seeds) {
    sc.surrogate.eps_seed = s;
    const auto recs = run_attack_suite(oracle, queries, sc);
    if (sink) sink->push_back(recs);
    const ScoreTable st = score_table(to_table(recs), {"score_mofit"});
    rows.push_back({s, auc(st.column("score_mofit"), st.labels, Orientation::member_high),
                    asr(st.column("score_mofit"), st.labels, Orientation::member_high)});
  }
  return rows;
}

/// Sample standard deviation of the per-seed AUCs.
inline double auc_spread(const std::vector<StabilityRow>& rows) {
  std::vector<double> a;
  for (const auto& r : rows) a.push_back(r.auc);
  return std::sqrt(variance_of(a));
}

inline std::vector<StabilityRow> cmd_stability(const Json& cfg) {
  const RunPaths paths(cfg);
  const auto samples = load_run_dataset(cfg);
  const auto seeds = cfg_get<std::vector<std::uint64_t>>(cfg, "stability", "eps_seeds");
  if (seeds.size() < 2) throw ConfigError("stability.eps_seeds needs at least two seeds");
  auto rows = with_oracle(cfg, [&](const auto& o) { return run_stability(o, samples, suite_config(cfg), seeds); });
  std::string csv = "# " + provenance_line(cfg) + "\neps_seed,auc,asr\n";
  for (const auto& r : rows) csv += std::to_string(r.eps_seed) + "," + format_double(r.auc) + "," + format_double(r.asr) + "\n";
  atomic_write(paths.root / "stability.csv", csv);
  return rows;
}

struct EarlyStopRow {
  double fraction = 0.0;
  double threshold = 0.0;
  double mean_iterations = 0.0;
  double auc = 0.5;
};

/// Surrogate-stage loss thresholds placed between the mean final and mean
/// initial losses of a full run: threshold = final + f * (initial - final).
/// Larger f means a looser threshold.
template <LossOracle O>
std::vector<EarlyStopRow> run_early_stop_sweep(const O& oracle, const std::vector<Sample>& queries, AttackSuiteConfig sc,
                                               const std::vector<AttackRecord>& full_run,
                                               const std::vector<double>& fractions, RecordSink* sink = nullptr) {
  std::vector<double> init, fin;
  for (const auto& r : full_run)
    if (r.ok() && !r.surrogate_trace.empty()) {
      init.push_back(r.surrogate_trace.front());
      fin.push_back(r.final_loss_surrogate);
    }
  if (init.empty()) throw ConfigError("early-stop sweep needs a successful full run");
  const double mi = mean_of(init), mf = mean_of(fin);
  sc.use_ground_truth = false;
  std::vector<EarlyStopRow> rows;
  for (double f : fractions) {
    AttackSuiteConfig c = sc;
    c.surrogate.early_stop_loss = mf + f * (mi - mf);
    const auto recs = run_attack_suite(oracle, queries, c);
    if (sink) sink->push_back(recs);
    std::vector<double> iters;
    for (const auto& r : recs)
      if (r.ok()) iters.push_back(double(r.iter_surrogate));
    rows.push_back({f, *c.surrogate.early_stop_loss, mean_of(iters), mofit_auc(recs)});
  }
  return rows;
}

inline std::vector<EarlyStopRow> cmd_early_stop(const Json& cfg) {
  const RunPaths paths(cfg);
  const auto samples = load_run_dataset(cfg);
  const auto fractions = cfg_get<std::vector<double>>(cfg, "early_stop", "fractions");
  auto rows = with_oracle(cfg, [&](const auto& o) {
    AttackSuiteConfig sc = suite_config(cfg);
    sc.surrogate.early_stop_loss.reset();
    sc.use_ground_truth = false;
    const auto full = run_attack_suite(o, samples, sc);
    auto r = run_early_stop_sweep(o, samples, sc, full, fractions);
    r.insert(r.begin(), EarlyStopRow{0.0, 0.0, [&] {
                                       double s = 0;
                                       for (const auto& x : full) s += x.iter_surrogate;
                                       return s / double(full.size());
                                     }(),
                                     mofit_auc(full)});
    return r;
  });
  std::string csv = "# " + provenance_line(cfg) + "\nfraction,threshold,mean_iterations,auc\n";
  for (const auto& r : rows)
    csv += format_double(r.fraction) + "," + format_double(r.threshold) + "," + format_double(r.mean_iterations) + "," +
           format_double(r.auc) + "\n";
  atomic_write(paths.root / "early_stop.csv", csv);
  return rows;
}

}  // namespace mofit
