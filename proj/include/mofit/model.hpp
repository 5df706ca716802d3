#pragma once

// Conditional noise predictor eps_theta(z_t, t, c) and its reverse-mode
// gradients. The network is a plain multilayer perceptron over the
// concatenation [flatten(z_t), time_embedding(t), condition]; every hidden
// layer applies x * sigmoid(x). Differentiation walks the fixed layer stack
// backwards, so no general tape is kept.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mofit/errors.hpp"
#include "mofit/rng.hpp"
#include "mofit/schedule.hpp"

namespace mofit {

using Matrix = Eigen::MatrixXd;

struct Arch {
  Shape shape;
  std::vector<int> hidden{256, 256};
  int time_dim = 32;
  int cond_dim = 16;

  int image_size() const { return static_cast<int>(shape.size()); }
  int input_dim() const { return image_size() + time_dim + cond_dim; }
  bool operator==(const Arch&) const = default;
};

enum class Provenance { ground_truth, approximate, optimized, null, random };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::ground_truth: return "ground_truth";
    case Provenance::approximate: return "approximate";
    case Provenance::optimized: return "optimized";
    case Provenance::null: return "null";
    case Provenance::random: return "random";
  }
  return "?";
}

/// A conditioning embedding. The null condition carries no vector of its own;
/// the model substitutes its reserved null embedding.
struct Condition {
  Vector embedding;
  Provenance provenance = Provenance::null;

  static Condition null() { return {}; }
  bool is_null() const { return provenance == Provenance::null; }
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

class DenoiserModel {
public:
  explicit DenoiserModel(Arch arch) : arch_(std::move(arch)) {
    detail::require(arch_.time_dim >= 0 && arch_.time_dim % 2 == 0, "time_dim must be even");
    detail::require(arch_.cond_dim >= 1, "cond_dim must be >= 1");
    int in = arch_.input_dim();
    for (int width : arch_.hidden) {
      detail::require(width >= 1, "hidden widths must be positive");
      layers_.push_back({Matrix::Zero(width, in), Vector::Zero(width)});
      in = width;
    }
    layers_.push_back({Matrix::Zero(arch_.image_size(), in), Vector::Zero(arch_.image_size())});
    null_embedding_ = Vector::Zero(arch_.cond_dim);
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static DenoiserModel random(Arch arch, std::uint64_t seed) {
    DenoiserModel m(std::move(arch));
    Engine eng = make_engine(seed, Purpose::kModelInit);
    for (auto& layer : m.layers_) {
      const double bound = 1.0 / std::sqrt(double(layer.weight.cols()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(eng);
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = dist(eng);
    }
    return m;
  }

  const Arch& arch() const { return arch_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Vector& null_embedding() const { return null_embedding_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += std::size_t(l.weight.size() + l.bias.size());
    return n;
  }

  /// Declaration order: for each layer, weight (row-major) then bias.
  Vector flat_parameters() const {
    Vector flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat[k++] = l.weight(r, c);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat[k++] = l.bias[r];
    }
    return flat;
  }

  void set_flat_parameters(const Vector& flat) {
    detail::require(flat.size() == Eigen::Index(parameter_count()), "parameter vector size mismatch");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[k++];
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[k++];
    }
  }

  /// FNV-1a over the raw parameter bytes in declaration order.
  std::uint64_t parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](double v) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    };
    const Vector flat = flat_parameters();
    for (Eigen::Index i = 0; i < flat.size(); ++i) feed(flat[i]);
    return h;
  }

private:
  Arch arch_;
  std::vector<Layer> layers_;
  Vector null_embedding_;
};

inline Vector time_embedding(int t, int dim) {
  Vector e(dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * double(k) / double(half));
    e[k] = std::sin(double(t) * freq);
    e[half + k] = std::cos(double(t) * freq);
  }
  return e;
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ForwardCache {
  std::vector<Matrix> pre;  // pre-activations of hidden layers
  std::vector<Matrix> act;  // act[0] = input, act[k] = output of hidden layer k
  Matrix output;
};

inline const Vector& resolve_condition(const DenoiserModel& model, const Condition& cond) {
  if (cond.is_null()) return model.null_embedding();
  require(cond.embedding.size() == model.arch().cond_dim,
          "condition dimension " + std::to_string(cond.embedding.size()) + " != arch cond_dim " +
              std::to_string(model.arch().cond_dim));
  return cond.embedding;
}

/// Writes one input column [z_t, time_embedding(t), cond].
inline void fill_input_column(Matrix& input, Eigen::Index col, const Vector& z_t, int t,
                              const Vector& cond, const Arch& arch) {
  const int n = arch.image_size();
  input.col(col).segment(0, n) = z_t;
  input.col(col).segment(n, arch.time_dim) = time_embedding(t, arch.time_dim);
  input.col(col).segment(n + arch.time_dim, arch.cond_dim) = cond;
}

inline ForwardCache forward(const DenoiserModel& model, Matrix input) {
  ForwardCache cache;
  const auto& layers = model.layers();
  cache.act.push_back(std::move(input));
  for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
    Matrix pre = layers[k].weight * cache.act.back();
    pre.colwise() += layers[k].bias;
    Matrix act = pre.unaryExpr([](double v) { return v * sigmoid(v); });
    cache.pre.push_back(std::move(pre));
    cache.act.push_back(std::move(act));
  }
  cache.output = layers.back().weight * cache.act.back();
  cache.output.colwise() += layers.back().bias;
  return cache;
}

struct Backward {
  std::vector<Layer> param_grads;  // empty unless requested
  Matrix d_input;
};

inline Backward backward(const DenoiserModel& model, const ForwardCache& cache, Matrix d_out,
                         bool want_params) {
  const auto& layers = model.layers();
  Backward result;
  if (want_params) result.param_grads.resize(layers.size());
  Matrix delta = std::move(d_out);
  for (std::size_t k = layers.size(); k-- > 0;) {
    if (want_params) {
      result.param_grads[k].weight = delta * cache.act[k].transpose();
      result.param_grads[k].bias = delta.rowwise().sum();
    }
    Matrix d_prev = layers[k].weight.transpose() * delta;
    if (k == 0) {
      result.d_input = std::move(d_prev);
      break;
    }
    const Matrix& pre = cache.pre[k - 1];
    delta = d_prev.binaryExpr(pre, [](double g, double x) {
      const double s = sigmoid(x);
      return g * s * (1.0 + x * (1.0 - s));
    });
  }
  return result;
}

/// Mean squared error over all elements; shared by every loss path so values agree bitwise.
inline double mse(const Matrix& pred, const Vector& eps) {
  return (pred.col(0) - eps).squaredNorm() / double(eps.size());
}

}  // namespace detail

/// eps_theta(z_t, t, cond). A null condition selects the model's null embedding.
inline Vector predict_noise(const DenoiserModel& model, const Vector& z_t, int t,
                            const Condition& cond) {
  const Arch& arch = model.arch();
  detail::require(z_t.size() == arch.image_size(), "predict_noise: latent has wrong shape");
  const Vector& c = detail::resolve_condition(model, cond);
  Matrix input(arch.input_dim(), 1);
  detail::fill_input_column(input, 0, z_t, t, c, arch);
  return detail::forward(model, std::move(input)).output.col(0);
}

enum class Wrt { parameters, image, condition };

inline const char* to_string(Wrt w) {
  switch (w) {
    case Wrt::parameters: return "parameters";
    case Wrt::image: return "image";
    case Wrt::condition: return "condition";
  }
  return "?";
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

namespace detail {

inline ForwardCache loss_forward(const DenoiserModel& model, const Vector& x, const Condition& cond,
                                 int t, const Vector& eps, const NoiseSchedule& sched) {
  const Arch& arch = model.arch();
  require(x.size() == arch.image_size(), "image has wrong shape for model");
  require(eps.size() == arch.image_size(), "noise has wrong shape for model");
  const Vector z_t = forward_diffuse(x, t, eps, sched);
  const Vector& c = resolve_condition(model, cond);
  Matrix input(arch.input_dim(), 1);
  fill_input_column(input, 0, z_t, t, c, arch);
  return forward(model, std::move(input));
}

}  // namespace detail

/// Single-draw loss and its gradient with respect to the requested target.
/// For Wrt::image the chain rule runs through the sqrt(abar_t) scaling of x.
inline LossGrad loss_and_grad(const DenoiserModel& model, const Vector& x, const Condition& cond,
                              int t, const Vector& eps, const NoiseSchedule& sched, Wrt wrt) {
  if (wrt == Wrt::condition && cond.is_null())
    throw ContractViolation("gradient w.r.t. the null condition requested; it is a constant");
  detail::ForwardCache cache = detail::loss_forward(model, x, cond, t, eps, sched);
  LossGrad out;
  out.loss = detail::mse(cache.output, eps);
  const double n = double(eps.size());
  Matrix d_out = (2.0 / n) * (cache.output.col(0) - eps);
  detail::Backward back = detail::backward(model, cache, std::move(d_out), wrt == Wrt::parameters);
  const Arch& arch = model.arch();
  switch (wrt) {
    case Wrt::image:
      out.grad = std::sqrt(sched.alpha_bar(t)) * back.d_input.col(0).segment(0, arch.image_size());
      break;
    case Wrt::condition:
      out.grad = back.d_input.col(0).segment(arch.image_size() + arch.time_dim, arch.cond_dim);
      break;
    case Wrt::parameters: {
      out.grad.resize(Eigen::Index(model.parameter_count()));
      Eigen::Index k = 0;
      for (const auto& g : back.param_grads) {
        for (Eigen::Index r = 0; r < g.weight.rows(); ++r)
          for (Eigen::Index c = 0; c < g.weight.cols(); ++c) out.grad[k++] = g.weight(r, c);
        for (Eigen::Index r = 0; r < g.bias.size(); ++r) out.grad[k++] = g.bias[r];
      }
      break;
    }
  }
  return out;
}

}  // namespace mofit
