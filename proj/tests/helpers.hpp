#pragma once

#include <cstdint>

#include "mofit/model.hpp"
#include "mofit/rng.hpp"
#include "mofit/schedule.hpp"

namespace mofit::testing {

inline Arch tiny_arch(int side = 4, std::vector<int> hidden = {16, 16}, int time_dim = 8, int cond_dim = 6) {
  Arch a;
  a.shape = {side, side, 1};
  a.hidden = std::move(hidden);
  a.time_dim = time_dim;
  a.cond_dim = cond_dim;
  return a;
}

/// Zero weights with the output bias set to `eps`: predicts `eps` for every
/// input, so its loss against `eps` is identically zero.
inline DenoiserModel perfect_stub(const Arch& arch, const Vector& eps) {
  DenoiserModel m(arch);
  m.layers().back().bias = eps;
  return m;
}

/// Random model whose first-layer columns reading the condition are zero.
inline DenoiserModel condition_blind(const Arch& arch, std::uint64_t seed) {
  DenoiserModel m = DenoiserModel::random(arch, seed);
  const int c0 = arch.image_size() + arch.time_dim;
  m.layers().front().weight.middleCols(c0, arch.cond_dim).setZero();
  return m;
}

inline Condition make_condition(const Vector& v, Provenance p = Provenance::approximate) {
  Condition c;
  c.embedding = v;
  c.provenance = p;
  return c;
}

inline Vector random_image(std::uint64_t seed, Eigen::Index n) {
  Engine e(seed);
  return uniform_vector(e, n, 0.0, 1.0);
}

inline Vector random_normal(std::uint64_t seed, Eigen::Index n) {
  Engine e(seed);
  return standard_normal(e, n);
}

inline NoiseSchedule default_schedule() { return build_schedule(1000, 1e-4, 0.02); }

}  // namespace mofit::testing
