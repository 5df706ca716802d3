#pragma once

// Separability statistics and the fused membership decision.
//
// Threshold conventions shared by asr / tpr_at_fpr / fuse_and_decide: scores
// are first oriented so members are high, a sample is called a member when
// its oriented score is strictly greater than tau, and tau ranges over -inf,
// the midpoints between consecutive distinct scores, and +inf.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mofit/errors.hpp"
#include "mofit/synthdata.hpp"

namespace mofit {

enum class Orientation { member_high, member_low };

inline const char* to_string(Orientation o) {
  return o == Orientation::member_high ? "member_high" : "member_low";
}

namespace detail {

struct Counts {
  std::size_t members = 0, holdouts = 0;
};

inline Counts count_labels(std::span<const Split> labels) {
  Counts c;
  for (Split s : labels) (s == Split::member ? c.members : c.holdouts)++;
  return c;
}

inline std::vector<double> oriented(std::span<const double> scores, Orientation o) {
  std::vector<double> out(scores.begin(), scores.end());
  if (o == Orientation::member_low)
    for (double& v : out) v = -v;
  return out;
}

inline void check_inputs(std::span<const double> scores, std::span<const Split> labels, bool need_both) {
  require(scores.size() == labels.size(), "scores and labels differ in length");
  for (double v : scores) require(std::isfinite(v), "non-finite score in metric input");
  if (need_both) {
    const Counts c = count_labels(labels);
    require(c.members > 0 && c.holdouts > 0, "metric needs both members and hold-outs");
  }
}

/// One step of the threshold sweep: tau and the confusion counts it yields.
struct SweepPoint {
  double tau;
  std::size_t tp, fp;
};

/// All candidate thresholds in increasing order.
inline std::vector<SweepPoint> threshold_sweep(const std::vector<double>& s, std::span<const Split> labels) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  const Counts c = count_labels(labels);
  std::vector<SweepPoint> out;
  std::size_t tp = c.members, fp = c.holdouts;
  out.push_back({-std::numeric_limits<double>::infinity(), tp, fp});
  for (std::size_t i = 0; i < idx.size();) {
    const double v = s[idx[i]];
    std::size_t j = i;
    for (; j < idx.size() && s[idx[j]] == v; ++j) (labels[idx[j]] == Split::member ? tp : fp)--;
    const double tau = j < idx.size() ? 0.5 * (v + s[idx[j]]) : std::numeric_limits<double>::infinity();
    out.push_back({tau, tp, fp});
    i = j;
  }
  return out;
}

}  // namespace detail

struct ThresholdChoice {
  double value = 0.5;  // balanced accuracy (asr) or TPR
  double tau = 0.0;
};

/// Best balanced accuracy (TPR + TNR) / 2 over all thresholds; the smallest
/// maximizing tau is reported.
inline ThresholdChoice asr_with_threshold(std::span<const double> scores, std::span<const Split> labels,
                                          Orientation o) {
  detail::check_inputs(scores, labels, true);
  const auto s = detail::oriented(scores, o);
  const auto c = detail::count_labels(labels);
  // compare integer numerators over the common denominator 2 * n_m * n_h so
  // equal accuracies tie exactly
  const double denom = 2.0 * double(c.members) * double(c.holdouts);
  std::size_t best_num = 0;
  ThresholdChoice best{-1.0, 0.0};
  for (const auto& p : detail::threshold_sweep(s, labels)) {
    const std::size_t num = p.tp * c.holdouts + (c.holdouts - p.fp) * c.members;
    if (best.value < 0.0 || num > best_num) {
      best_num = num;
      best = {double(num) / denom, p.tau};
    }
  }
  if (o == Orientation::member_low) best.tau = -best.tau;
  return best;
}

inline double asr(std::span<const double> scores, std::span<const Split> labels, Orientation o) {
  return asr_with_threshold(scores, labels, o).value;
}

/// Rank-sum AUC: P(member > hold-out) + 0.5 P(tie).
inline double auc(std::span<const double> scores, std::span<const Split> labels, Orientation o) {
  detail::check_inputs(scores, labels, true);
  const auto s = detail::oriented(scores, o);
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  double member_rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && s[idx[j]] == s[idx[i]]) ++j;
    const double avg_rank = 0.5 * double(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == Split::member) member_rank_sum += avg_rank;
    i = j;
  }
  const auto c = detail::count_labels(labels);
  const double nm = double(c.members), nh = double(c.holdouts);
  return (member_rank_sum - nm * (nm + 1.0) / 2.0) / (nm * nh);
}

/// Highest TPR whose empirical FPR does not exceed fpr_cap (no interpolation).
inline double tpr_at_fpr(std::span<const double> scores, std::span<const Split> labels, Orientation o,
                         double fpr_cap = 0.01) {
  detail::check_inputs(scores, labels, true);
  const auto s = detail::oriented(scores, o);
  const auto c = detail::count_labels(labels);
  const auto allowed_fp = std::size_t(std::floor(fpr_cap * double(c.holdouts) + 1e-9));
  double best = 0.0;
  for (const auto& p : detail::threshold_sweep(s, labels))
    if (p.fp <= allowed_fp) best = std::max(best, double(p.tp) / double(c.members));
  return best;
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b| over pooled points.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  detail::require(!a.empty() && !b.empty(), "ks_statistic needs two nonempty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() || j < sb.size()) {
    const double x = j >= sb.size() || (i < sa.size() && sa[i] <= sb[j]) ? sa[i] : sb[j];
    while (i < sa.size() && sa[i] <= x) ++i;
    while (j < sb.size() && sb[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / sa.size() - double(j) / sb.size()));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Gaussian kernel density estimates

/// Scott's rule h = n^(-1/5) * sample std (n - 1 denominator). A sample
/// without spread uses unit std.
inline double scott_bandwidth(std::span<const double> xs) {
  detail::require(!xs.empty(), "bandwidth of empty sample");
  const double n = double(xs.size());
  double sd = 0.0;
  if (xs.size() > 1) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : xs) ss += (v - mean) * (v - mean);
    sd = std::sqrt(ss / (n - 1.0));
  }
  if (!(sd > 0.0)) sd = 1.0;
  return sd * std::pow(n, -0.2);
}

inline double kde_density(std::span<const double> xs, double h, double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  double acc = 0.0;
  for (double v : xs) {
    const double u = (x - v) / h;
    acc += std::exp(-0.5 * u * u);
  }
  return acc * kInvSqrt2Pi / (h * double(xs.size()));
}

inline std::vector<double> uniform_grid(double lo, double hi, int points) {
  detail::require(points >= 2, "grid needs at least two points");
  std::vector<double> g(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) g[std::size_t(i)] = lo + (hi - lo) * double(i) / double(points - 1);
  return g;
}

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
};

/// Density on a uniform grid over [min - 3h, max + 3h].
inline KdeCurve kde_curve(std::span<const double> xs, int grid_points = 512) {
  const double h = scott_bandwidth(xs);
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  KdeCurve c;
  c.grid = uniform_grid(*mn - 3.0 * h, *mx + 3.0 * h, grid_points);
  c.density.reserve(c.grid.size());
  for (double x : c.grid) c.density.push_back(kde_density(xs, h, x));
  return c;
}

/// KDE curves of two samples on one shared grid spanning both (used for plots
/// and the KL estimate).
struct PairedKde {
  std::vector<double> grid;
  std::vector<double> density_a, density_b;
};

inline PairedKde paired_kde(std::span<const double> a, std::span<const double> b, int grid_points = 512) {
  detail::require(!a.empty() && !b.empty(), "paired_kde needs two nonempty samples");
  const double ha = scott_bandwidth(a), hb = scott_bandwidth(b);
  const double hmax = std::max(ha, hb);
  double lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
  double hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
  PairedKde out;
  out.grid = uniform_grid(lo - 3.0 * hmax, hi + 3.0 * hmax, grid_points);
  for (double x : out.grid) {
    out.density_a.push_back(kde_density(a, ha, x));
    out.density_b.push_back(kde_density(b, hb, x));
  }
  return out;
}

/// KL(p_a || p_b) between Gaussian KDEs, by a Riemann sum on the shared grid.
/// Densities are floored at 1e-12 and renormalized on the grid.
inline double kl_divergence_kde(std::span<const double> a, std::span<const double> b,
                                int grid_points = 512) {
  PairedKde k = paired_kde(a, b, grid_points);
  const double dx = k.grid[1] - k.grid[0];
  double za = 0.0, zb = 0.0;
  for (std::size_t i = 0; i < k.grid.size(); ++i) {
    k.density_a[i] = std::max(k.density_a[i], 1e-12);
    k.density_b[i] = std::max(k.density_b[i], 1e-12);
    za += k.density_a[i] * dx;
    zb += k.density_b[i] * dx;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < k.grid.size(); ++i) {
    const double p = k.density_a[i] / za, q = k.density_b[i] / zb;
    kl += p * std::log(p / q) * dx;
  }
  return kl;
}

// ---------------------------------------------------------------------------
// Robust scaling

/// Linear-interpolation ("type 7") quantile of an ascending sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  detail::require(!sorted.empty(), "quantile of empty sample");
  const double h = (double(sorted.size()) - 1.0) * q;
  const auto lo = std::size_t(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - double(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double median(std::span<const double> xs) {
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, 0.5);
}

struct RobustStats {
  double median = 0.0;
  double iqr = 0.0;
  bool degenerate = false;  // zero interquartile range
};

inline RobustStats robust_stats(std::span<const double> xs) {
  detail::require(!xs.empty(), "robust_scale of an empty list");
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  RobustStats st;
  st.median = quantile_sorted(s, 0.5);
  st.iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  st.degenerate = !(st.iqr > 0.0);
  return st;
}

/// (w - median) / IQR with given statistics; all zeros when degenerate.
inline std::vector<double> robust_apply(std::span<const double> xs, const RobustStats& st) {
  std::vector<double> out(xs.size(), 0.0);
  if (!st.degenerate)
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - st.median) / st.iqr;
  return out;
}

struct RobustScaled {
  std::vector<double> values;
  bool degenerate = false;
};

inline RobustScaled robust_scale(std::span<const double> xs) {
  const RobustStats st = robust_stats(xs);
  return {robust_apply(xs, st), st.degenerate};
}

// ---------------------------------------------------------------------------
// Fusion

/// Per-sample labels plus named score columns.
struct ScoreTable {
  std::vector<std::uint64_t> ids;
  std::vector<Split> labels;
  std::map<std::string, std::vector<double>> columns;

  const std::vector<double>& column(const std::string& name) const {
    auto it = columns.find(name);
    if (it == columns.end()) throw ConfigError("score table has no column '" + name + "'");
    return it->second;
  }
};

enum class Calibration { pooled, subset };

struct FusionConfig {
  double gamma_step = 0.05;
  std::string score_column = "score_mofit";
  std::string aux_column = "l_uncond";
  Calibration calibration = Calibration::pooled;
  double subset_fraction = 0.5;
};

struct FusionResult {
  double best_gamma = 0.0;
  double best_tau = 0.0;
  double best_asr = 0.5;
  std::vector<int> decisions;
  std::vector<double> gammas;
  std::vector<double> asr_per_gamma;
  std::vector<std::string> degenerate_flags;
  std::vector<double> fused;  // fused score at best_gamma
};

inline int gamma_count(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("fusion.gamma_step must lie in (0,1]");
  const double k = std::round(1.0 / step);
  if (std::abs(k * step - 1.0) > 1e-9) throw ConfigError("fusion.gamma_step must divide 1 evenly");
  return int(k);
}

/// Rows used to fit the scaler: everything (pooled) or, for subset
/// calibration, the leading fraction of each split in table order.
inline std::vector<std::size_t> calibration_rows(const ScoreTable& t, const FusionConfig& cfg) {
  std::vector<std::size_t> rows;
  if (cfg.calibration == Calibration::pooled) {
    rows.resize(t.labels.size());
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
  }
  if (!(cfg.subset_fraction > 0.0 && cfg.subset_fraction <= 1.0))
    throw ConfigError("fusion.subset_fraction must lie in (0,1]");
  const auto c = detail::count_labels(t.labels);
  const auto want_m = std::size_t(std::ceil(cfg.subset_fraction * double(c.members)));
  const auto want_h = std::size_t(std::ceil(cfg.subset_fraction * double(c.holdouts)));
  std::size_t got_m = 0, got_h = 0;
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    if (t.labels[i] == Split::member && got_m < want_m) rows.push_back(i), ++got_m;
    if (t.labels[i] == Split::holdout && got_h < want_h) rows.push_back(i), ++got_h;
  }
  return rows;
}

/// fused = gamma * R(score) + (1 - gamma) * R(-aux) for gamma on the step grid;
/// tau maximizes balanced accuracy per gamma. Ties go to the smaller gamma,
/// then the smaller tau.
inline FusionResult fuse_and_decide(const ScoreTable& table, const FusionConfig& cfg) {
  const int K = gamma_count(cfg.gamma_step);
  const auto& score = table.column(cfg.score_column);
  const auto& aux = table.column(cfg.aux_column);
  detail::require(score.size() == table.labels.size() && aux.size() == table.labels.size(),
                  "score table columns differ in length");
  std::vector<double> neg_aux(aux.size());
  std::transform(aux.begin(), aux.end(), neg_aux.begin(), [](double v) { return -v; });

  const auto rows = calibration_rows(table, cfg);
  auto fit = [&](const std::vector<double>& col) {
    std::vector<double> sub;
    for (std::size_t r : rows) sub.push_back(col[r]);
    return robust_stats(sub);
  };
  const RobustStats s_stats = fit(score), a_stats = fit(neg_aux);
  const auto rs = robust_apply(score, s_stats);
  const auto ra = robust_apply(neg_aux, a_stats);

  FusionResult res;
  if (s_stats.degenerate) res.degenerate_flags.push_back(cfg.score_column + ":zero_iqr");
  if (a_stats.degenerate) res.degenerate_flags.push_back(cfg.aux_column + ":zero_iqr");
  res.best_asr = -1.0;
  std::vector<double> fused(score.size());
  for (int k = 0; k <= K; ++k) {
    const double gamma = double(k) / double(K);
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = gamma * rs[i] + (1.0 - gamma) * ra[i];
    const ThresholdChoice choice = asr_with_threshold(fused, table.labels, Orientation::member_high);
    res.gammas.push_back(gamma);
    res.asr_per_gamma.push_back(choice.value);
    if (choice.value > res.best_asr) {
      res.best_asr = choice.value;
      res.best_gamma = gamma;
      res.best_tau = choice.tau;
      res.fused = fused;
    }
  }
  res.decisions.resize(res.fused.size());
  for (std::size_t i = 0; i < res.fused.size(); ++i) res.decisions[i] = res.fused[i] > res.best_tau ? 1 : 0;
  return res;
}

}  // namespace mofit
