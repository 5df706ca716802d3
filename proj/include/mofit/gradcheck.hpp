#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "mofit/diffusion.hpp"

namespace mofit {

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_coordinate = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares loss_and_grad against central differences (L(+h) - L(-h)) / 2h on
/// `probes` coordinates drawn from `probe_seed`. Relative error uses the
/// denominator max(|analytic|, |numeric|, 1e-12).
inline GradCheckResult finite_diff_check(const DenoiserModel& model, const Vector& x,
                                         const Condition& cond, int t, const Vector& eps,
                                         const NoiseSchedule& sched, Wrt wrt, int probes, double h,
                                         std::uint64_t probe_seed = 0) {
  detail::require(probes >= 1, "finite_diff_check: probes must be >= 1");
  detail::require(std::isfinite(h) && h > 0.0, "finite_diff_check: step h must be finite and > 0");

  const LossGrad analytic = loss_and_grad(model, x, cond, t, eps, sched, wrt);
  const Eigen::Index dim = analytic.grad.size();

  DenoiserModel work = model;
  Vector params;
  if (wrt == Wrt::parameters) params = work.flat_parameters();
  Vector xw = x;
  Condition cw = cond;

  auto loss_at = [&](Eigen::Index i, double value) {
    switch (wrt) {
      case Wrt::image: {
        const double keep = xw[i];
        xw[i] = value;
        const double l = eval_loss(work, xw, cw, t, eps, sched);
        xw[i] = keep;
        return l;
      }
      case Wrt::condition: {
        const double keep = cw.embedding[i];
        cw.embedding[i] = value;
        const double l = eval_loss(work, xw, cw, t, eps, sched);
        cw.embedding[i] = keep;
        return l;
      }
      case Wrt::parameters: {
        const double keep = params[i];
        params[i] = value;
        work.set_flat_parameters(params);
        const double l = eval_loss(work, xw, cw, t, eps, sched);
        params[i] = keep;
        work.set_flat_parameters(params);
        return l;
      }
    }
    return 0.0;
  };
  auto base_value = [&](Eigen::Index i) {
    switch (wrt) {
      case Wrt::image: return xw[i];
      case Wrt::condition: return cw.embedding[i];
      case Wrt::parameters: return params[i];
    }
    return 0.0;
  };

  Engine eng(probe_seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, dim - 1);
  GradCheckResult res;
  for (int p = 0; p < probes; ++p) {
    const Eigen::Index i = probes >= dim ? Eigen::Index(p % dim) : pick(eng);
    const double v = base_value(i);
    const double numeric = (loss_at(i, v + h) - loss_at(i, v - h)) / (2.0 * h);
    const double a = analytic.grad[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > res.max_relative_error || res.worst_coordinate < 0) {
      res.max_relative_error = std::max(rel, res.max_relative_error);
      res.worst_coordinate = i;
      res.analytic_at_worst = a;
      res.numeric_at_worst = numeric;
    }
  }
  return res;
}

}  // namespace mofit
