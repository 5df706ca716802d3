#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "mofit/diffusion.hpp"
#include "mofit/errors.hpp"
#include "mofit/model.hpp"
#include "mofit/rng.hpp"
#include "mofit/synthdata.hpp"

namespace mofit {

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Vector m, v;
  long step = 0;
};

/// One bias-corrected adaptive-moment step, in place.
inline void adam_update(Eigen::Ref<Vector> param, const Eigen::Ref<const Vector>& grad,
                        AdamMoments& st, const AdamSettings& s) {
  if (st.m.size() != param.size()) {
    st.m = Vector::Zero(param.size());
    st.v = Vector::Zero(param.size());
  }
  ++st.step;
  st.m = s.beta1 * st.m + (1.0 - s.beta1) * grad;
  st.v = s.beta2 * st.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(st.step));
  param.array() -= s.lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + s.eps);
}

struct BlurAugment {
  double sigma_lo = 0.1;
  double sigma_hi = 2.0;
};

struct TrainConfig {
  int steps = 0;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double cfg_drop_prob = 0.1;
  std::optional<BlurAugment> blur;
  std::uint64_t master_seed = 0;
};

/// 3x3 Gaussian blur, kernel normalized to sum 1, mirrored borders.
inline Vector gaussian_blur3x3(const Vector& img, const Shape& shape, double sigma) {
  detail::require(img.size() == shape.size(), "blur: image shape mismatch");
  double k[3][3];
  double total = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      k[dy + 1][dx + 1] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += k[dy + 1][dx + 1];
    }
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  Vector out(img.size());
  for (int r = 0; r < shape.height; ++r)
    for (int c = 0; c < shape.width; ++c)
      for (int ch = 0; ch < shape.channels; ++ch) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int rr = reflect(r + dy, shape.height);
            const int cc = reflect(c + dx, shape.width);
            acc += k[dy + 1][dx + 1] * img[(Eigen::Index(rr) * shape.width + cc) * shape.channels + ch];
          }
        out[(Eigen::Index(r) * shape.width + c) * shape.channels + ch] = acc / total;
      }
  return out;
}

struct TrainResult {
  DenoiserModel model;
  std::vector<double> loss_curve;  // batch-mean loss per step
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(cfg.cfg_drop_prob >= 0.0 && cfg.cfg_drop_prob <= 1.0))
    throw ConfigError("train.cfg_drop_prob must lie in [0,1]");
  if (cfg.blur && !(cfg.blur->sigma_lo > 0.0 && cfg.blur->sigma_lo <= cfg.blur->sigma_hi))
    throw ConfigError("train.blur sigma range must satisfy 0 < low <= high");
}

/// Joint conditional / unconditional denoising objective: each batch item gets
/// its own t ~ U{1..T}, fresh eps, and with probability cfg_drop_prob the null
/// condition in place of its ground-truth one.
inline TrainResult train(DenoiserModel model, const std::vector<Sample>& members,
                         const NoiseSchedule& sched, const TrainConfig& cfg) {
  validate(cfg);
  if (cfg.steps > 0 && members.empty())
    throw ConfigError("train: member list is empty but train.steps > 0");
  const Arch& arch = model.arch();
  const int n = arch.image_size();
  const int B = cfg.batch_size;

  std::vector<Condition> conds;
  conds.reserve(members.size());
  for (const auto& s : members) {
    detail::require(s.image.size() == n, "train: sample image does not match model shape");
    conds.push_back(encode_condition(s.spec, arch.cond_dim));
  }

  std::vector<AdamMoments> w_state(model.layers().size()), b_state(model.layers().size());
  const AdamSettings adam{cfg.learning_rate, 0.9, 0.999, 1e-8};

  TrainResult result{model, {}};
  DenoiserModel& m = result.model;
  result.loss_curve.reserve(std::size_t(cfg.steps));

  Matrix input(arch.input_dim(), B);
  Matrix target(n, B);
  for (int step = 0; step < cfg.steps; ++step) {
    Engine eng = make_engine(cfg.master_seed, Purpose::kTrainBatch, std::uint64_t(step));
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, sched.steps());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int b = 0; b < B; ++b) {
      const std::size_t idx = pick(eng);
      const int t = pick_t(eng);
      const Vector eps = standard_normal(eng, n);
      const bool drop = unit(eng) < cfg.cfg_drop_prob;
      Vector x = members[idx].image;
      if (cfg.blur) {
        const double sigma = std::uniform_real_distribution<double>(cfg.blur->sigma_lo, cfg.blur->sigma_hi)(eng);
        x = gaussian_blur3x3(x, arch.shape, sigma);
      }
      const Vector& c = drop ? m.null_embedding() : conds[idx].embedding;
      detail::fill_input_column(input, b, forward_diffuse(x, t, eps, sched), t, c, arch);
      target.col(b) = eps;
    }
    detail::ForwardCache cache = detail::forward(m, input);
    Matrix diff = cache.output - target;
    const double loss = diff.squaredNorm() / (double(n) * B);
    if (!std::isfinite(loss)) throw NumericalError("training loss is not finite", step);
    result.loss_curve.push_back(loss);
    diff *= 2.0 / (double(n) * B);
    detail::Backward back = detail::backward(m, cache, std::move(diff), true);
    for (std::size_t k = 0; k < m.layers().size(); ++k) {
      Layer& layer = m.layers()[k];
      Eigen::Map<Vector> w(layer.weight.data(), layer.weight.size());
      adam_update(w, Eigen::Map<const Vector>(back.param_grads[k].weight.data(), layer.weight.size()),
                  w_state[k], adam);
      adam_update(layer.bias, back.param_grads[k].bias, b_state[k], adam);
    }
  }
  return result;
}

enum class CondMode { ground_truth, null };

/// Per-sample Monte-Carlo loss under ground-truth or null conditioning.
inline std::vector<double> evaluate_fit(const DenoiserModel& model, const std::vector<Sample>& samples,
                                        CondMode mode, int t, int draws, std::uint64_t seed,
                                        const NoiseSchedule& sched) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Condition c = mode == CondMode::ground_truth
                            ? encode_condition(s.spec, model.arch().cond_dim)
                            : Condition::null();
    out.push_back(eval_loss_expectation(model, s.image, c, t, draws,
                                        stream_seed(seed, Purpose::kEvalFit, s.id), sched));
  }
  return out;
}

}  // namespace mofit
