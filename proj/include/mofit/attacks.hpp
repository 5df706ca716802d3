#pragma once

// Caption-free membership inference against a conditional denoiser.
//
// Per query x0, with one fixed (t*, eps_hat):
//   1. surrogate:  x* = argmin_x L_uncond(x)  by decaying sign-gradient steps
//                  from x0 + delta_init, delta_init ~ U[-r, r]
//   2. embedding:  phi* = argmin_phi L_cond(x*, phi)  by Adam, started from the
//                  approximate condition
//   3. score:      L_cond(x0, phi*) - L_uncond(x0)   (members score high)
// The Loss and CLiD baselines reuse the same (t*, eps_hat).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mofit/diffusion.hpp"
#include "mofit/errors.hpp"
#include "mofit/rng.hpp"
#include "mofit/synthdata.hpp"
#include "mofit/trainer.hpp"

namespace mofit {

struct SurrogateConfig {
  int t_star = 140;
  double alpha0 = 0.15;
  int iters = 1000;
  double delta_init_range = 0.3;
  std::optional<double> early_stop_loss;
  std::uint64_t eps_seed = 0;
  bool clamp = true;  // keep surrogates inside the [0,1] pixel domain
};

struct EmbeddingConfig {
  double lr = 0.06;
  int iters = 200;
  std::optional<double> early_stop_loss;
};

inline void validate(const SurrogateConfig& c, int T) {
  if (!(c.alpha0 > 0.0)) throw ConfigError("surrogate.alpha0 must be > 0");
  if (c.iters < 0) throw ConfigError("surrogate.iters must be >= 0");
  if (c.t_star < 1 || c.t_star > T)
    throw ConfigError("surrogate.t_star must lie in [1, " + std::to_string(T) + "]");
  if (!(c.delta_init_range >= 0.0)) throw ConfigError("surrogate.delta_init_range must be >= 0");
}

inline void validate(const EmbeddingConfig& c) {
  if (!(c.lr > 0.0)) throw ConfigError("embedding.lr must be > 0");
  if (c.iters < 0) throw ConfigError("embedding.iters must be >= 0");
}

/// Loss trace of one optimization stage. losses[0] is the starting point,
/// losses[i] the loss after update i.
struct OptimTrace {
  std::vector<double> losses;
  int iterations_used = 0;
  double best_loss = 0.0;

  std::vector<double> running_best(bool maximize = false) const {
    std::vector<double> out(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i)
      out[i] = i == 0 ? losses[0]
                      : (maximize ? std::max(out[i - 1], losses[i]) : std::min(out[i - 1], losses[i]));
    return out;
  }
};

/// Fixed per-query randomness: target noise and initial perturbation.
struct QueryStreams {
  Vector eps_hat;
  Vector delta_init;
};

inline QueryStreams make_query_streams(std::uint64_t master_seed, std::uint64_t sample_id,
                                       const SurrogateConfig& cfg, Eigen::Index n) {
  Engine e_eps = make_engine(master_seed, Purpose::kEpsHat, sample_id, cfg.eps_seed);
  Engine e_delta = make_engine(master_seed, Purpose::kDeltaInit, sample_id, cfg.eps_seed);
  return {standard_normal(e_eps, n),
          uniform_vector(e_delta, n, -cfg.delta_init_range, cfg.delta_init_range)};
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Vector clamp_pixels(Vector x) { return x.cwiseMax(0.0).cwiseMin(1.0); }

inline void check_finite(double loss, const char* stage, long iteration) {
  if (!std::isfinite(loss)) throw NumericalError(std::string(stage) + ": non-finite loss", iteration);
}

}  // namespace detail

struct SurrogateResult {
  Vector x_star;  // best iterate
  Vector x_last;  // raw final iterate
  OptimTrace trace;
};

/// Sign-gradient descent (direction = +1) or ascent (direction = -1) on
/// L_uncond(x; t*, eps_hat) with step alpha_i = alpha0 * (1 - i / iters).
/// The best iterate, counting the starting point, is returned.
template <LossOracle O>
SurrogateResult optimize_surrogate(const O& oracle, const Vector& x0, const SurrogateConfig& cfg,
                                   const QueryStreams& streams, double direction = 1.0) {
  validate(cfg, oracle.info().schedule.steps());
  detail::require(x0.size() == oracle.info().shape.size(), "optimize_surrogate: image shape mismatch");
  const bool maximize = direction < 0.0;
  const Condition null = Condition::null();
  Vector x = x0 + streams.delta_init;
  if (cfg.clamp) x = detail::clamp_pixels(std::move(x));

  LossGrad lg = oracle.loss_grad(x, null, cfg.t_star, streams.eps_hat, Wrt::image);
  detail::check_finite(lg.loss, "surrogate", 0);
  SurrogateResult res;
  res.x_star = x;
  res.trace.losses.push_back(lg.loss);
  res.trace.best_loss = lg.loss;
  auto reached = [&](double loss) {
    return !maximize && cfg.early_stop_loss && loss <= *cfg.early_stop_loss;
  };
  if (!reached(lg.loss)) {
    for (int i = 0; i < cfg.iters; ++i) {
      const double alpha = cfg.alpha0 * (1.0 - double(i) / double(cfg.iters));
      x -= (direction * alpha) * lg.grad.unaryExpr([](double g) { return detail::sign(g); });
      if (cfg.clamp) x = detail::clamp_pixels(std::move(x));
      lg = oracle.loss_grad(x, null, cfg.t_star, streams.eps_hat, Wrt::image);
      detail::check_finite(lg.loss, "surrogate", i + 1);
      res.trace.losses.push_back(lg.loss);
      res.trace.iterations_used = i + 1;
      if (maximize ? lg.loss > res.trace.best_loss : lg.loss < res.trace.best_loss) {
        res.trace.best_loss = lg.loss;
        res.x_star = x;
      }
      if (reached(lg.loss)) break;
    }
  }
  res.x_last = std::move(x);
  return res;
}

enum class SurrogateMode { model_fitted, random_uniform, adversarial_max };

inline const char* to_string(SurrogateMode m) {
  switch (m) {
    case SurrogateMode::model_fitted: return "model_fitted";
    case SurrogateMode::random_uniform: return "random_uniform";
    case SurrogateMode::adversarial_max: return "adversarial_max";
  }
  return "?";
}

inline SurrogateMode surrogate_mode_from_string(const std::string& s) {
  if (s == "model_fitted") return SurrogateMode::model_fitted;
  if (s == "random_uniform") return SurrogateMode::random_uniform;
  if (s == "adversarial_max") return SurrogateMode::adversarial_max;
  throw ConfigError("unknown surrogate mode '" + s + "'");
}

struct SurrogateVariant {
  SurrogateMode mode = SurrogateMode::model_fitted;
  double eps_noise = 0.0;  // random_uniform only; 0 gives the clean query
};

/// Input-variation ablation. random_uniform draws its noise from `noise_seed`.
template <LossOracle O>
SurrogateResult optimize_surrogate_variant(const O& oracle, const Vector& x0, const SurrogateConfig& cfg,
                                           const QueryStreams& streams, const SurrogateVariant& variant,
                                           std::uint64_t noise_seed = 0) {
  switch (variant.mode) {
    case SurrogateMode::model_fitted: return optimize_surrogate(oracle, x0, cfg, streams, 1.0);
    case SurrogateMode::adversarial_max: return optimize_surrogate(oracle, x0, cfg, streams, -1.0);
    case SurrogateMode::random_uniform: {
      if (!(variant.eps_noise >= 0.0)) throw ConfigError("random_uniform eps_noise must be >= 0");
      Vector x = x0;
      if (variant.eps_noise > 0.0) {
        Engine eng(noise_seed);
        x += uniform_vector(eng, x0.size(), -variant.eps_noise, variant.eps_noise);
        if (cfg.clamp) x = detail::clamp_pixels(std::move(x));
      }
      const double l = oracle.loss(x, Condition::null(), cfg.t_star, streams.eps_hat);
      detail::check_finite(l, "surrogate", 0);
      SurrogateResult res{x, x, {}};
      res.trace.losses.push_back(l);
      res.trace.best_loss = l;
      return res;
    }
  }
  throw ConfigError("unknown surrogate mode");
}

struct EmbeddingResult {
  Condition phi_star;
  OptimTrace trace;
};

/// Adam on the condition vector to minimize L_cond(x*, phi; t*, eps_hat),
/// starting from `init` (the approximate condition). Best iterate returned.
template <LossOracle O>
EmbeddingResult extract_embedding(const O& oracle, const Vector& x_star, const EmbeddingConfig& cfg,
                                  const Condition& init, int t_star, const Vector& eps_hat) {
  validate(cfg);
  if (init.provenance != Provenance::approximate)
    throw ConfigError("extract_embedding: init must be an approximate condition");
  Condition phi = init;
  phi.provenance = Provenance::optimized;
  LossGrad lg = oracle.loss_grad(x_star, phi, t_star, eps_hat, Wrt::condition);
  detail::check_finite(lg.loss, "embedding", 0);
  EmbeddingResult res{phi, {}};
  res.trace.losses.push_back(lg.loss);
  res.trace.best_loss = lg.loss;
  auto reached = [&](double loss) { return cfg.early_stop_loss && loss <= *cfg.early_stop_loss; };
  if (!reached(lg.loss)) {
    AdamMoments moments;
    const AdamSettings adam{cfg.lr, 0.9, 0.999, 1e-8};
    for (int i = 0; i < cfg.iters; ++i) {
      adam_update(phi.embedding, lg.grad, moments, adam);
      lg = oracle.loss_grad(x_star, phi, t_star, eps_hat, Wrt::condition);
      detail::check_finite(lg.loss, "embedding", i + 1);
      res.trace.losses.push_back(lg.loss);
      res.trace.iterations_used = i + 1;
      if (lg.loss < res.trace.best_loss) {
        res.trace.best_loss = lg.loss;
        res.phi_star = phi;
      }
      if (reached(lg.loss)) break;
    }
  }
  return res;
}

/// L_cond(x0, phi*) - L_uncond(x0); members are expected to score high.
template <LossOracle O>
double mofit_score(const O& oracle, const Vector& x0, const Condition& phi_star, int t_star,
                   const Vector& eps_hat) {
  return oracle.loss(x0, phi_star, t_star, eps_hat) -
         oracle.loss(x0, Condition::null(), t_star, eps_hat);
}

/// L_cond(x0, c) - L_uncond(x0); members are expected to score low.
template <LossOracle O>
double clid_score(const O& oracle, const Vector& x0, const Condition& cond, int t_star,
                  const Vector& eps_hat) {
  return oracle.loss(x0, cond, t_star, eps_hat) - oracle.loss(x0, Condition::null(), t_star, eps_hat);
}

/// L_cond(x0, c); members are expected to score low.
template <LossOracle O>
double loss_baseline_score(const O& oracle, const Vector& x0, const Condition& cond, int t_star,
                           const Vector& eps_hat) {
  return oracle.loss(x0, cond, t_star, eps_hat);
}

struct AttackRecord {
  std::uint64_t sample_id = 0;
  Split split = Split::member;
  double l_uncond = 0.0;
  std::optional<double> l_cond_gt;
  double l_cond_approx = 0.0;
  double l_cond_phi_star = 0.0;
  double score_mofit = 0.0;
  std::optional<double> score_clid_gt;
  double score_clid_approx = 0.0;
  double score_loss = 0.0;
  std::vector<double> surrogate_trace;
  std::vector<double> embed_trace;
  int iter_surrogate = 0;
  int iter_embed = 0;
  double final_loss_surrogate = 0.0;
  double final_loss_embed = 0.0;
  std::optional<std::string> error;  // set when this query failed
  bool numerical_failure = false;

  bool ok() const { return !error.has_value(); }
};

struct AttackSuiteConfig {
  SurrogateConfig surrogate;
  EmbeddingConfig embedding;
  SurrogateVariant variant;
  double approx_fidelity = 0.5;
  std::uint64_t master_seed = 0;
  bool use_ground_truth = true;  // compute the GT-conditioned reference columns
  int workers = 1;
};

inline std::uint64_t approx_condition_seed(std::uint64_t master_seed, std::uint64_t sample_id) {
  return stream_seed(master_seed, Purpose::kApproxCondition, sample_id);
}

/// Full attack for one query; throws on failure.
template <LossOracle O>
AttackRecord attack_query(const O& oracle, const Sample& q, const AttackSuiteConfig& cfg) {
  const int d_c = oracle.info().cond_dim;
  const int t = cfg.surrogate.t_star;
  AttackRecord r;
  r.sample_id = q.id;
  r.split = q.split;
  const QueryStreams streams = make_query_streams(cfg.master_seed, q.id, cfg.surrogate, q.image.size());
  const Condition approx =
      approximate_condition(q.spec, cfg.approx_fidelity, approx_condition_seed(cfg.master_seed, q.id), d_c);

  r.l_uncond = oracle.loss(q.image, Condition::null(), t, streams.eps_hat);
  detail::check_finite(r.l_uncond, "l_uncond", -1);
  r.l_cond_approx = oracle.loss(q.image, approx, t, streams.eps_hat);
  if (cfg.use_ground_truth) {
    r.l_cond_gt = oracle.loss(q.image, encode_condition(q.spec, d_c), t, streams.eps_hat);
    r.score_clid_gt = *r.l_cond_gt - r.l_uncond;
  }

  const SurrogateResult sur = optimize_surrogate_variant(
      oracle, q.image, cfg.surrogate, streams, cfg.variant,
      stream_seed(cfg.master_seed, Purpose::kRandomDelta, q.id, cfg.surrogate.eps_seed));
  const EmbeddingResult emb =
      extract_embedding(oracle, sur.x_star, cfg.embedding, approx, t, streams.eps_hat);

  r.l_cond_phi_star = oracle.loss(q.image, emb.phi_star, t, streams.eps_hat);
  r.score_mofit = r.l_cond_phi_star - r.l_uncond;
  r.score_clid_approx = r.l_cond_approx - r.l_uncond;
  r.score_loss = r.l_cond_approx;
  r.surrogate_trace = sur.trace.losses;
  r.embed_trace = emb.trace.losses;
  r.iter_surrogate = sur.trace.iterations_used;
  r.iter_embed = emb.trace.iterations_used;
  r.final_loss_surrogate = sur.trace.best_loss;
  r.final_loss_embed = emb.trace.best_loss;
  for (double v : {r.l_cond_approx, r.l_cond_phi_star, r.score_mofit})
    detail::check_finite(v, "score", -1);
  return r;
}

/// Runs every query independently; results come back in query order. A failing
/// query yields a record with `error` set and never stops the suite.
template <LossOracle O>
std::vector<AttackRecord> run_attack_suite(const O& oracle, const std::vector<Sample>& queries,
                                           const AttackSuiteConfig& cfg) {
  validate(cfg.surrogate, oracle.info().schedule.steps());
  validate(cfg.embedding);
  if (!(cfg.approx_fidelity >= 0.0 && cfg.approx_fidelity <= 1.0))
    throw ConfigError("attack.approx_fidelity must lie in [0,1]");
  std::vector<AttackRecord> out(queries.size());
  auto run_one = [&](std::size_t i) {
    try {
      out[i] = attack_query(oracle, queries[i], cfg);
    } catch (const std::exception& e) {
      AttackRecord r;
      r.sample_id = queries[i].id;
      r.split = queries[i].split;
      r.error = e.what();
      r.numerical_failure = dynamic_cast<const NumericalError*>(&e) != nullptr;
      out[i] = std::move(r);
    }
  };
  const int workers = std::max(1, std::min<int>(cfg.workers, int(queries.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < queries.size(); i = next++) run_one(i);
    });
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace mofit
