#pragma once

// Counter-based stream splitting. Every random draw in the toolkit comes from
// a substream keyed by (master seed, purpose tag, id, index); the key is mixed
// with SplitMix64 into a 64-bit seed for a Mersenne Twister engine. Streams are
// therefore independent of evaluation order and thread scheduling.

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace mofit {

enum class Purpose : std::uint64_t {
  kNoiseDraw = 1,
  kModelInit = 2,
  kDataset = 3,
  kTrainBatch = 4,
  kBlur = 5,
  kEpsHat = 6,
  kDeltaInit = 7,
  kApproxCondition = 8,
  kRandomDelta = 9,
  kEvalFit = 10,
  kRandomCondition = 11,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x632BE59BD9B4E019ULL));
}

inline std::uint64_t stream_seed(std::uint64_t master, Purpose purpose, std::uint64_t id = 0,
                                 std::uint64_t index = 0) {
  std::uint64_t s = mix_seed(master, static_cast<std::uint64_t>(purpose));
  s = mix_seed(s, id);
  return mix_seed(s, index);
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t master, Purpose purpose, std::uint64_t id = 0,
                          std::uint64_t index = 0) {
  return Engine(stream_seed(master, purpose, id, index));
}

inline Eigen::VectorXd standard_normal(Engine& eng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(eng);
  return v;
}

inline Eigen::VectorXd uniform_vector(Engine& eng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(eng);
  return v;
}

}  // namespace mofit
