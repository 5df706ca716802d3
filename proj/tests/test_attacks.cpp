#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "helpers.hpp"
#include "mofit/attacks.hpp"

namespace mofit {
namespace {

using testing::condition_blind;
using testing::default_schedule;
using testing::make_condition;
using testing::perfect_stub;
using testing::random_image;
using testing::random_normal;
using testing::tiny_arch;

Arch affine_only(int side, int cond_dim) {
  Arch a;
  a.shape = {side, side, 1};
  a.hidden = {};
  a.time_dim = 0;
  a.cond_dim = cond_dim;
  return a;
}

// Mid-grey query so x0 + delta_init stays inside [0,1] without clamping.
Vector mid_image(std::uint64_t seed, Eigen::Index n) {
  Engine e(seed);
  return uniform_vector(e, n, 0.35, 0.65);
}

std::vector<Sample> glyphs(int n_member, int n_holdout, const Arch& a) {
  DatasetConfig c;
  c.shape = a.shape;
  c.n_member = n_member;
  c.n_holdout = n_holdout;
  c.cond_dim = a.cond_dim;
  c.seed = 5;
  return generate_dataset(c);
}

SurrogateConfig short_surrogate(int iters = 40) {
  SurrogateConfig s;
  s.iters = iters;
  return s;
}

EmbeddingConfig short_embedding(int iters = 20) {
  EmbeddingConfig e;
  e.iters = iters;
  return e;
}

// Wraps a model and returns NaN losses for one poisoned query image.
class PoisonedOracle {
public:
  PoisonedOracle(const DenoiserModel& m, Vector poison) : inner_(m, default_schedule()), poison_(std::move(poison)) {}
  const OracleInfo& info() const { return inner_.info(); }
  double loss(const Vector& x, const Condition& c, int t, const Vector& eps) const {
    return x == poison_ ? std::nan("") : inner_.loss(x, c, t, eps);
  }
  LossGrad loss_grad(const Vector& x, const Condition& c, int t, const Vector& eps, Wrt w) const {
    return inner_.loss_grad(x, c, t, eps, w);
  }

private:
  LocalOracle inner_;
  Vector poison_;
};

// Returns a finite loss for the first `good` gradient calls, then NaN.
class FailingAfter {
public:
  FailingAfter(const DenoiserModel& m, int good) : inner_(m, default_schedule()), good_(good) {}
  const OracleInfo& info() const { return inner_.info(); }
  double loss(const Vector& x, const Condition& c, int t, const Vector& eps) const { return inner_.loss(x, c, t, eps); }
  LossGrad loss_grad(const Vector& x, const Condition& c, int t, const Vector& eps, Wrt w) const {
    LossGrad g = inner_.loss_grad(x, c, t, eps, w);
    if (calls_++ >= good_) g.loss = std::nan("");
    return g;
  }

private:
  LocalOracle inner_;
  int good_;
  mutable std::atomic<int> calls_{0};
};

static_assert(LossOracle<PoisonedOracle>);
static_assert(LossOracle<FailingAfter>);

// ---------------------------------------------------------------------------
// surrogate stage

TEST(Surrogate, PerfectStubIsAFixedPoint) {
  const Arch a = tiny_arch();
  const SurrogateConfig cfg = short_surrogate();
  const QueryStreams st = make_query_streams(1, 7, cfg, a.image_size());
  const auto m = perfect_stub(a, st.eps_hat);
  const LocalOracle o(m, default_schedule());
  const Vector x0 = mid_image(1, a.image_size());
  const auto r = optimize_surrogate(o, x0, cfg, st);
  EXPECT_EQ(r.x_star, x0 + st.delta_init);
  EXPECT_EQ(r.x_last, x0 + st.delta_init);
  ASSERT_EQ(r.trace.losses.size(), 41u);
  for (double l : r.trace.losses) EXPECT_EQ(l, 0.0);
}

TEST(Surrogate, ZeroIterationsReturnsPerturbedStart) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 2);
  const LocalOracle o(m, default_schedule());
  const SurrogateConfig cfg = short_surrogate(0);
  const QueryStreams st = make_query_streams(1, 3, cfg, a.image_size());
  const Vector x0 = mid_image(2, a.image_size());
  const auto r = optimize_surrogate(o, x0, cfg, st);
  EXPECT_EQ(r.x_star, x0 + st.delta_init);
  EXPECT_EQ(r.trace.losses.size(), 1u);
  EXPECT_EQ(r.trace.iterations_used, 0);
}

TEST(Surrogate, StepLawAndSignOnAffineModel) {
  // one step from a point where every gradient sign is known
  const Arch a = affine_only(2, 1);
  DenoiserModel m(a);
  m.layers()[0].weight.leftCols(4).setIdentity();
  SurrogateConfig cfg = short_surrogate(1);
  cfg.delta_init_range = 0.0;
  cfg.clamp = false;
  QueryStreams st{Vector::Zero(4), Vector::Zero(4)};
  const LocalOracle o(m, default_schedule());
  Vector x0(4);
  x0 << 0.5, -0.5, 0.0, 0.2;
  const auto r = optimize_surrogate(o, x0, cfg, st);
  // L = mean((sqrt(abar) x)^2); sign of the gradient is sign(x)
  Vector want(4);
  want << 0.35, -0.35, 0.0, 0.05;
  EXPECT_LT((r.x_last - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Surrogate, LinearModelReachesCoordinateDescentOptimum) {
  const Arch a = affine_only(3, 1);
  const int n = a.image_size();
  DenoiserModel m(a);
  Engine eng(17);
  // rank-deficient W keeps the global minimum strictly positive
  const Matrix U = uniform_vector(eng, n * 4, -1.0, 1.0).reshaped(n, 4);
  const Matrix V = uniform_vector(eng, 4 * n, -1.0, 1.0).reshaped(4, n);
  const Matrix W = U * V;
  m.layers()[0].weight.leftCols(n) = W;
  const auto s = default_schedule();
  SurrogateConfig cfg;  // defaults: 1000 iterations, alpha0 0.15, t* 140
  const QueryStreams st = make_query_streams(3, 1, cfg, n);
  const LocalOracle o(m, s);
  const Vector x0 = mid_image(9, n);
  const auto r = optimize_surrogate(o, x0, cfg, st);

  // box-constrained exact coordinate descent on the same quadratic
  const double sa = std::sqrt(s.alpha_bar(cfg.t_star)), sb = std::sqrt(1.0 - s.alpha_bar(cfg.t_star));
  const Matrix A = sa * W;
  const Vector b = sb * W * st.eps_hat - st.eps_hat;
  auto objective = [&](const Vector& x) { return (A * x + b).squaredNorm() / double(n); };
  Vector x = x0;
  Vector res = A * x + b;
  for (int sweep = 0; sweep < 20000; ++sweep)
    for (int j = 0; j < n; ++j) {
      const double cc = A.col(j).squaredNorm();
      if (cc == 0.0) continue;
      const double xj = std::clamp(x[j] - A.col(j).dot(res) / cc, 0.0, 1.0);
      res += A.col(j) * (xj - x[j]);
      x[j] = xj;
    }
  const double best = objective(x);
  ASSERT_GT(best, 1e-3);
  EXPECT_NEAR(r.trace.best_loss, objective(r.x_star), 1e-12);
  EXPECT_LE(r.trace.best_loss, 1.10 * best);
  EXPECT_GE(r.trace.best_loss, best - 1e-9);
}

TEST(Surrogate, BestIterateIsTraceMinimumAndNoWorseThanStart) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 4);
  const LocalOracle o(m, default_schedule());
  const SurrogateConfig cfg = short_surrogate(60);
  for (std::uint64_t id = 0; id < 5; ++id) {
    const QueryStreams st = make_query_streams(2, id, cfg, a.image_size());
    const auto r = optimize_surrogate(o, random_image(id, a.image_size()), cfg, st);
    const auto best = r.trace.running_best();
    for (std::size_t i = 1; i < best.size(); ++i) EXPECT_LE(best[i], best[i - 1]);
    EXPECT_EQ(r.trace.best_loss, best.back());
    EXPECT_LE(r.trace.best_loss, r.trace.losses.front());
    EXPECT_EQ(o.loss(r.x_star, Condition::null(), cfg.t_star, st.eps_hat), r.trace.best_loss);
    EXPECT_GE(r.x_star.minCoeff(), 0.0);
    EXPECT_LE(r.x_star.maxCoeff(), 1.0);
  }
}

TEST(Surrogate, LooserThresholdNeverIteratesMore) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 5);
  const LocalOracle o(m, default_schedule());
  SurrogateConfig cfg = short_surrogate(80);
  const QueryStreams st = make_query_streams(2, 3, cfg, a.image_size());
  const Vector x0 = random_image(3, a.image_size());
  const auto full = optimize_surrogate(o, x0, cfg, st);
  const double lo = full.trace.best_loss, hi = full.trace.losses.front();
  int prev = cfg.iters + 1;
  for (double f : {0.0, 0.1, 0.3, 0.6, 0.9, 1.1}) {  // tightest to loosest
    cfg.early_stop_loss = lo + f * (hi - lo);
    const int used = optimize_surrogate(o, x0, cfg, st).trace.iterations_used;
    EXPECT_LE(used, prev) << f;
    prev = used;
  }
  EXPECT_EQ(prev, 0);  // threshold above the starting loss
}

TEST(Surrogate, NonFiniteLossCarriesIteration) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 6);
  const FailingAfter o(m, 3);
  const SurrogateConfig cfg = short_surrogate(10);
  const QueryStreams st = make_query_streams(0, 0, cfg, a.image_size());
  try {
    optimize_surrogate(o, random_image(1, a.image_size()), cfg, st);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.iteration(), 3);
  }
}

TEST(Surrogate, InvalidConfigIsConfigError) {
  const Arch a = tiny_arch();
  const DenoiserModel m(a);
  const LocalOracle o(m, default_schedule());
  SurrogateConfig cfg;
  cfg.t_star = 0;
  const QueryStreams st = make_query_streams(0, 0, short_surrogate(), a.image_size());
  EXPECT_THROW(optimize_surrogate(o, random_image(1, a.image_size()), cfg, st), ConfigError);
  cfg = SurrogateConfig{};
  cfg.alpha0 = 0.0;
  EXPECT_THROW(optimize_surrogate(o, random_image(1, a.image_size()), cfg, st), ConfigError);
}

TEST(QueryStreams, DeterministicPerSampleAndSeed) {
  SurrogateConfig cfg;
  const auto a = make_query_streams(1, 2, cfg, 16), b = make_query_streams(1, 2, cfg, 16);
  EXPECT_EQ(a.eps_hat, b.eps_hat);
  EXPECT_EQ(a.delta_init, b.delta_init);
  EXPECT_LE(a.delta_init.cwiseAbs().maxCoeff(), cfg.delta_init_range);
  EXPECT_NE(make_query_streams(1, 3, cfg, 16).eps_hat, a.eps_hat);
  cfg.eps_seed = 1;
  EXPECT_NE(make_query_streams(1, 2, cfg, 16).eps_hat, a.eps_hat);
}

// ---------------------------------------------------------------------------
// variants

TEST(Variants, RandomUniformWithoutNoiseIsTheQuery) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 7);
  const LocalOracle o(m, default_schedule());
  const SurrogateConfig cfg = short_surrogate();
  const QueryStreams st = make_query_streams(0, 1, cfg, a.image_size());
  const Vector x0 = random_image(2, a.image_size());
  const auto r = optimize_surrogate_variant(o, x0, cfg, st, {SurrogateMode::random_uniform, 0.0});
  EXPECT_EQ(r.x_star, x0);
  const auto noisy = optimize_surrogate_variant(o, x0, cfg, st, {SurrogateMode::random_uniform, 0.1}, 5);
  EXPECT_LE((noisy.x_star - x0).cwiseAbs().maxCoeff(), 0.1 + 1e-15);
  EXPECT_NE(noisy.x_star, x0);
}

TEST(Variants, AdversarialOnPerfectStubStaysPut) {
  const Arch a = tiny_arch();
  const SurrogateConfig cfg = short_surrogate();
  const QueryStreams st = make_query_streams(0, 2, cfg, a.image_size());
  const auto m = perfect_stub(a, st.eps_hat);
  const LocalOracle o(m, default_schedule());
  const Vector x0 = mid_image(3, a.image_size());
  const auto r = optimize_surrogate_variant(o, x0, cfg, st, {SurrogateMode::adversarial_max, 0.0});
  EXPECT_EQ(r.x_star, x0 + st.delta_init);
  EXPECT_EQ(r.trace.best_loss, 0.0);
}

TEST(Variants, AscentAndDescentBracketTheStart) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 8);
  const LocalOracle o(m, default_schedule());
  const SurrogateConfig cfg = short_surrogate(30);
  for (std::uint64_t id = 0; id < 4; ++id) {
    const QueryStreams st = make_query_streams(1, id, cfg, a.image_size());
    const Vector x0 = random_image(10 + id, a.image_size());
    const auto up = optimize_surrogate_variant(o, x0, cfg, st, {SurrogateMode::adversarial_max, 0.0});
    const auto down = optimize_surrogate_variant(o, x0, cfg, st, {SurrogateMode::model_fitted, 0.0});
    EXPECT_GE(up.trace.best_loss, up.trace.losses.front());
    EXPECT_LE(down.trace.best_loss, down.trace.losses.front());
    EXPECT_EQ(up.trace.losses.front(), down.trace.losses.front());
  }
}

TEST(Variants, ModeNamesRoundTrip) {
  for (auto m : {SurrogateMode::model_fitted, SurrogateMode::random_uniform, SurrogateMode::adversarial_max})
    EXPECT_EQ(surrogate_mode_from_string(to_string(m)), m);
  EXPECT_THROW(surrogate_mode_from_string("delta_min"), ConfigError);
}

// ---------------------------------------------------------------------------
// embedding stage

TEST(Embedding, ScalarConditionConvergesToLeastSquares) {
  const Arch a = affine_only(3, 1);
  const int n = a.image_size();
  auto m = DenoiserModel::random(a, 12);
  const auto s = default_schedule();
  const int t = 140;
  const Vector x = random_image(4, n), eps = random_normal(5, n);
  // pred = r0 + w * phi with r0 the prediction at phi = 0
  const Vector w = m.layers()[0].weight.col(n);
  const Vector r0 = predict_noise(m, forward_diffuse(x, t, eps, s), t, make_condition(Vector::Zero(1))) - eps;
  const double phi_opt = -w.dot(r0) / w.squaredNorm();

  const LocalOracle o(m, s);
  EmbeddingConfig cfg;
  cfg.iters = 2000;
  const auto r = extract_embedding(o, x, cfg, make_condition(Vector::Constant(1, phi_opt + 1.5)), t, eps);
  EXPECT_NEAR(r.phi_star.embedding[0], phi_opt, 1e-3);
  EXPECT_EQ(r.phi_star.provenance, Provenance::optimized);
}

TEST(Embedding, EarlyStopAtInitReturnsInit) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 13);
  const LocalOracle o(m, default_schedule());
  const Vector x = random_image(1, a.image_size()), eps = random_normal(2, a.image_size());
  const Condition init = make_condition(random_normal(3, a.cond_dim));
  EmbeddingConfig cfg;
  cfg.early_stop_loss = 1e9;
  const auto r = extract_embedding(o, x, cfg, init, 140, eps);
  EXPECT_EQ(r.phi_star.embedding, init.embedding);
  EXPECT_EQ(r.trace.iterations_used, 0);
  EXPECT_EQ(r.trace.losses.size(), 1u);
}

TEST(Embedding, BestLossNeverAboveInit) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 14);
  const LocalOracle o(m, default_schedule());
  for (std::uint64_t k = 0; k < 4; ++k) {
    const Vector x = random_image(k, a.image_size()), eps = random_normal(k + 10, a.image_size());
    const auto r = extract_embedding(o, x, short_embedding(50), make_condition(random_normal(k + 20, a.cond_dim)),
                                     140, eps);
    const auto best = r.trace.running_best();
    for (std::size_t i = 1; i < best.size(); ++i) EXPECT_LE(best[i], best[i - 1]);
    EXPECT_LE(r.trace.best_loss, r.trace.losses.front());
    EXPECT_EQ(o.loss(x, r.phi_star, 140, eps), r.trace.best_loss);
  }
}

TEST(Embedding, RequiresApproximateInit) {
  const Arch a = tiny_arch();
  const DenoiserModel m(a);
  const LocalOracle o(m, default_schedule());
  const Vector x = random_image(1, a.image_size());
  EXPECT_THROW(extract_embedding(o, x, short_embedding(), make_condition(Vector::Zero(a.cond_dim),
                                                                         Provenance::ground_truth),
                                 140, x),
               ConfigError);
}

// ---------------------------------------------------------------------------
// scores

TEST(Scores, ConditionBlindModelScoresZero) {
  const Arch a = tiny_arch();
  const auto m = condition_blind(a, 15);
  const LocalOracle o(m, default_schedule());
  const Vector x = random_image(1, a.image_size()), eps = random_normal(2, a.image_size());
  const auto c = make_condition(random_normal(3, a.cond_dim));
  EXPECT_EQ(mofit_score(o, x, c, 140, eps), 0.0);
  EXPECT_EQ(clid_score(o, x, c, 140, eps), 0.0);
}

TEST(Scores, PerfectStubScoresZero) {
  const Arch a = tiny_arch();
  const Vector eps = random_normal(2, a.image_size());
  const auto m = perfect_stub(a, eps);
  const LocalOracle o(m, default_schedule());
  const Vector x = random_image(1, a.image_size());
  const auto c = make_condition(random_normal(3, a.cond_dim));
  EXPECT_EQ(mofit_score(o, x, c, 140, eps), 0.0);
  EXPECT_EQ(loss_baseline_score(o, x, c, 140, eps), 0.0);
}

TEST(Scores, HandBuiltTwoByTwo) {
  Arch a = affine_only(2, 1);
  DenoiserModel m(a);
  const double W[4][5] = {{0.5, -0.25, 0.0, 1.0, 0.3},
                          {0.1, 0.2, -0.7, 0.0, -0.5},
                          {0.0, 0.0, 0.4, 0.4, 1.0},
                          {-1.0, 0.6, 0.2, -0.3, 0.0}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) m.layers()[0].weight(r, c) = W[r][c];
  const NoiseSchedule s = NoiseSchedule::from_betas({0.36});  // abar = 0.64
  const double x[4] = {0.2, 0.9, 0.5, 0.0};
  const double e[4] = {1.0, -0.5, 0.25, 2.0};
  const double phi = -0.4;
  double lc = 0, lu = 0;
  for (int r = 0; r < 4; ++r) {
    double pred = 0;
    for (int c = 0; c < 4; ++c) pred += W[r][c] * (0.8 * x[c] + 0.6 * e[c]);
    lu += (pred - e[r]) * (pred - e[r]) / 4.0;
    lc += (pred + W[r][4] * phi - e[r]) * (pred + W[r][4] * phi - e[r]) / 4.0;
  }
  Vector xv(4), ev(4);
  for (int i = 0; i < 4; ++i) xv[i] = x[i], ev[i] = e[i];
  const LocalOracle o(m, s);
  const auto c = make_condition(Vector::Constant(1, phi), Provenance::optimized);
  EXPECT_NEAR(mofit_score(o, xv, c, 1, ev), lc - lu, 1e-12);
}

TEST(Scores, IdentitiesBetweenScoringRules) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 16);
  const auto s = default_schedule();
  const LocalOracle o(m, s);
  const Vector x = random_image(1, a.image_size()), eps = random_normal(2, a.image_size());
  const auto c = make_condition(random_normal(3, a.cond_dim));
  EXPECT_EQ(clid_score(o, x, c, 140, eps), mofit_score(o, x, c, 140, eps));
  EXPECT_EQ(loss_baseline_score(o, x, Condition::null(), 140, eps), o.loss(x, Condition::null(), 140, eps));
  EXPECT_EQ(loss_baseline_score(o, x, c, 140, eps), eval_loss(m, x, c, 140, eps, s));
}

// ---------------------------------------------------------------------------
// suite

AttackSuiteConfig suite_config(int s_iters = 15, int e_iters = 10) {
  AttackSuiteConfig c;
  c.surrogate = short_surrogate(s_iters);
  c.embedding = short_embedding(e_iters);
  c.master_seed = 21;
  return c;
}

TEST(Suite, EmptyQueryListGivesNoRecords) {
  const Arch a = tiny_arch();
  const DenoiserModel m(a);
  const LocalOracle o(m, default_schedule());
  EXPECT_TRUE(run_attack_suite(o, {}, suite_config()).empty());
}

TEST(Suite, RecordsSatisfyScoreIdentities) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 17);
  const LocalOracle o(m, default_schedule());
  const auto q = glyphs(3, 3, a);
  const auto recs = run_attack_suite(o, q, suite_config());
  ASSERT_EQ(recs.size(), q.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.sample_id, q[i].id);
    EXPECT_EQ(r.split, q[i].split);
    EXPECT_EQ(r.score_mofit, r.l_cond_phi_star - r.l_uncond);
    EXPECT_EQ(*r.score_clid_gt, *r.l_cond_gt - r.l_uncond);
    EXPECT_EQ(r.score_clid_approx, r.l_cond_approx - r.l_uncond);
    EXPECT_EQ(r.score_loss, r.l_cond_approx);
    EXPECT_EQ(r.surrogate_trace.size(), std::size_t(r.iter_surrogate + 1));
    EXPECT_EQ(r.embed_trace.size(), std::size_t(r.iter_embed + 1));
    EXPECT_EQ(r.final_loss_surrogate, *std::min_element(r.surrogate_trace.begin(), r.surrogate_trace.end()));
  }
}

TEST(Suite, GroundTruthColumnsAreOptional) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 17);
  const LocalOracle o(m, default_schedule());
  auto cfg = suite_config();
  cfg.use_ground_truth = false;
  const auto recs = run_attack_suite(o, glyphs(1, 1, a), cfg);
  for (const auto& r : recs) {
    EXPECT_FALSE(r.l_cond_gt.has_value());
    EXPECT_FALSE(r.score_clid_gt.has_value());
  }
}

TEST(Suite, DeterministicPureAndWorkerIndependent) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 18);
  const auto h = m.parameter_hash();
  const LocalOracle o(m, default_schedule());
  const auto q = glyphs(4, 4, a);
  auto cfg = suite_config();
  const auto r1 = run_attack_suite(o, q, cfg);
  cfg.workers = 3;
  const auto r2 = run_attack_suite(o, q, cfg);
  EXPECT_EQ(m.parameter_hash(), h);
  ASSERT_EQ(r1.size(), r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    EXPECT_EQ(r1[i].score_mofit, r2[i].score_mofit);
    EXPECT_EQ(r1[i].surrogate_trace, r2[i].surrogate_trace);
    EXPECT_EQ(r1[i].embed_trace, r2[i].embed_trace);
  }
}

TEST(Suite, FailingQueryIsRecordedAndOthersContinue) {
  const Arch a = tiny_arch();
  const auto m = DenoiserModel::random(a, 19);
  const auto q = glyphs(2, 2, a);
  const PoisonedOracle o(m, q[1].image);
  const auto recs = run_attack_suite(o, q, suite_config());
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_FALSE(recs[1].ok());
  EXPECT_TRUE(recs[1].numerical_failure);
  EXPECT_EQ(recs[1].sample_id, q[1].id);
  for (std::size_t i : {0u, 2u, 3u}) EXPECT_TRUE(recs[i].ok()) << i;
}

TEST(Suite, RejectsBadFidelity) {
  const Arch a = tiny_arch();
  const DenoiserModel m(a);
  const LocalOracle o(m, default_schedule());
  auto cfg = suite_config();
  cfg.approx_fidelity = 2.0;
  EXPECT_THROW(run_attack_suite(o, glyphs(1, 1, a), cfg), ConfigError);
}

}  // namespace
}  // namespace mofit
