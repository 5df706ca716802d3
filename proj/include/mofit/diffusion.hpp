#pragma once

#include <concepts>
#include <cstdint>

#include "mofit/model.hpp"
#include "mofit/rng.hpp"
#include "mofit/schedule.hpp"

namespace mofit {

inline constexpr int kProtocolVersion = 1;

struct NoiseDraw {
  Vector eps;
  std::uint64_t seed_id = 0;
};

/// Standard-normal draw from the substream (master_seed, seed_id).
inline NoiseDraw draw_noise(std::uint64_t master_seed, std::uint64_t seed_id, Eigen::Index n) {
  Engine eng = make_engine(master_seed, Purpose::kNoiseDraw, seed_id);
  return {standard_normal(eng, n), seed_id};
}

/// mean((eps - eps_theta(z_t, t, cond))^2) at a single fixed (t, eps).
inline double eval_loss(const DenoiserModel& model, const Vector& x, const Condition& cond, int t,
                        const Vector& eps, const NoiseSchedule& sched) {
  return detail::mse(detail::loss_forward(model, x, cond, t, eps, sched).output, eps);
}

/// Monte-Carlo mean over `draws` noise draws; draw i uses seed_id i of `seed`.
inline double eval_loss_expectation(const DenoiserModel& model, const Vector& x,
                                    const Condition& cond, int t, int draws, std::uint64_t seed,
                                    const NoiseSchedule& sched) {
  detail::require(draws >= 1, "eval_loss_expectation: draws must be >= 1");
  double sum = 0.0;
  for (int i = 1; i <= draws; ++i)
    sum += eval_loss(model, x, cond, t, draw_noise(seed, std::uint64_t(i), x.size()).eps, sched);
  return sum / double(draws);
}

/// What an attack needs to know about the audited model.
struct OracleInfo {
  Shape shape;
  int cond_dim = 0;
  NoiseSchedule schedule;
  int version = kProtocolVersion;
};

/// Anything that evaluates denoising losses and their image / condition
/// gradients. Attacks are written against this so they run unchanged on an
/// in-process model or a remote one.
template <class O>
concept LossOracle = requires(const O& o, const Vector& x, const Condition& c, int t,
                              const Vector& eps, Wrt wrt) {
  { o.info() } -> std::convertible_to<const OracleInfo&>;
  { o.loss(x, c, t, eps) } -> std::convertible_to<double>;
  { o.loss_grad(x, c, t, eps, wrt) } -> std::convertible_to<LossGrad>;
};

class LocalOracle {
public:
  LocalOracle(const DenoiserModel& model, NoiseSchedule schedule) : model_(&model) {
    info_.shape = model.arch().shape;
    info_.cond_dim = model.arch().cond_dim;
    info_.schedule = std::move(schedule);
  }

  const OracleInfo& info() const { return info_; }
  const DenoiserModel& model() const { return *model_; }

  double loss(const Vector& x, const Condition& c, int t, const Vector& eps) const {
    return eval_loss(*model_, x, c, t, eps, info_.schedule);
  }

  LossGrad loss_grad(const Vector& x, const Condition& c, int t, const Vector& eps, Wrt wrt) const {
    return loss_and_grad(*model_, x, c, t, eps, info_.schedule, wrt);
  }

private:
  const DenoiserModel* model_;
  OracleInfo info_;
};

static_assert(LossOracle<LocalOracle>);

}  // namespace mofit
