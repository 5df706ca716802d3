#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mofit/errors.hpp"

namespace mofit {

using Vector = Eigen::VectorXd;

/// Image geometry. Images are stored flattened, row-major over (row, col, channel).
struct Shape {
  int height = 16;
  int width = 16;
  int channels = 1;

  Eigen::Index size() const { return Eigen::Index(height) * width * channels; }
  bool operator==(const Shape&) const = default;
};

/// Discrete forward-process schedule. Timesteps are 1-indexed: t in [1, T].
struct NoiseSchedule {
  std::vector<double> betas;       // betas[t-1]
  std::vector<double> alpha_bars;  // alpha_bars[t-1] = prod_{i<=t} (1 - beta_i)

  int steps() const { return static_cast<int>(betas.size()); }

  double alpha_bar(int t) const {
    detail::require(t >= 1 && t <= steps(),
                    "timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return alpha_bars[static_cast<std::size_t>(t - 1)];
  }

  /// Sequential cumulative product over an explicit beta sequence.
  static NoiseSchedule from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.alpha_bars.resize(betas.size());
    double acc = 1.0;
    for (std::size_t i = 0; i < betas.size(); ++i) {
      acc *= (1.0 - betas[i]);
      s.alpha_bars[i] = acc;
    }
    s.betas = std::move(betas);
    return s;
  }
};

/// Linear beta schedule from beta_start to beta_end inclusive.
inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule.T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_start < 1.0))
    throw ConfigError("schedule.beta_start must lie in (0,1)");
  if (!(beta_end >= beta_start && beta_end < 1.0))
    throw ConfigError("schedule.beta_end must lie in [beta_start, 1)");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : double(i) / double(T - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

/// z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps
inline Vector forward_diffuse(const Vector& z0, int t, const Vector& eps, const NoiseSchedule& sched) {
  detail::require(z0.size() == eps.size(), "forward_diffuse: z0 and eps shapes differ");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

}  // namespace mofit
