#pragma once

// Procedural glyph images with attribute-vector conditions. Members and
// hold-outs are drawn i.i.d. from one glyph distribution; the approximate
// condition degrades the attributes the way an imperfect captioner would.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mofit/errors.hpp"
#include "mofit/model.hpp"
#include "mofit/rng.hpp"

namespace mofit {

enum class ShapeKind { disc = 0, square = 1, cross = 2, ring = 3 };
inline constexpr int kShapeKinds = 4;

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disc: return "disc";
    case ShapeKind::square: return "square";
    case ShapeKind::cross: return "cross";
    case ShapeKind::ring: return "ring";
  }
  return "?";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "disc") return ShapeKind::disc;
  if (s == "square") return ShapeKind::square;
  if (s == "cross") return ShapeKind::cross;
  if (s == "ring") return ShapeKind::ring;
  throw ConfigError("unknown shape_kind '" + s + "'");
}

struct GlyphSpec {
  ShapeKind shape_kind = ShapeKind::disc;
  double center_row = 0.5;
  double center_col = 0.5;
  double radius = 0.25;
  double intensity = 0.8;
  double background = 0.1;

  bool operator==(const GlyphSpec&) const = default;
};

/// Valid range of each continuous attribute, in encoding order.
struct AttributeRange {
  double lo, hi;
};
inline constexpr std::array<AttributeRange, 5> kAttributeRanges{{
    {0.0, 1.0},  // center_row
    {0.0, 1.0},  // center_col
    {0.1, 0.4},  // radius
    {0.3, 1.0},  // intensity
    {0.0, 0.2},  // background
}};

// The generator keeps centers away from the border so most of each glyph is visible.
inline constexpr AttributeRange kGeneratorCenterRange{0.2, 0.8};

inline std::array<double, 5> attributes(const GlyphSpec& s) {
  return {s.center_row, s.center_col, s.radius, s.intensity, s.background};
}

inline GlyphSpec with_attributes(GlyphSpec s, const std::array<double, 5>& a) {
  s.center_row = a[0];
  s.center_col = a[1];
  s.radius = a[2];
  s.intensity = a[3];
  s.background = a[4];
  return s;
}

inline bool glyph_contains(const GlyphSpec& s, double row, double col) {
  const double dr = row - s.center_row;
  const double dc = col - s.center_col;
  const double r = s.radius;
  switch (s.shape_kind) {
    case ShapeKind::disc: return dr * dr + dc * dc <= r * r;
    case ShapeKind::square: return std::abs(dr) <= r && std::abs(dc) <= r;
    case ShapeKind::cross: {
      const double arm = r / 3.0;
      return (std::abs(dr) <= r && std::abs(dc) <= arm) || (std::abs(dc) <= r && std::abs(dr) <= arm);
    }
    case ShapeKind::ring: {
      const double d2 = dr * dr + dc * dc;
      return d2 <= r * r && d2 >= 0.36 * r * r;
    }
  }
  return false;
}

/// 4x4 supersampled coverage blended between background and intensity.
inline Vector render(const GlyphSpec& s, const Shape& shape) {
  constexpr int kSuper = 4;
  Vector img(shape.size());
  for (int i = 0; i < shape.height; ++i) {
    for (int j = 0; j < shape.width; ++j) {
      int hits = 0;
      for (int a = 0; a < kSuper; ++a)
        for (int b = 0; b < kSuper; ++b) {
          const double row = (i + (a + 0.5) / kSuper) / shape.height;
          const double col = (j + (b + 0.5) / kSuper) / shape.width;
          hits += glyph_contains(s, row, col) ? 1 : 0;
        }
      const double cover = double(hits) / (kSuper * kSuper);
      const double v = cover * s.intensity + (1.0 - cover) * s.background;
      for (int c = 0; c < shape.channels; ++c)
        img[(Eigen::Index(i) * shape.width + j) * shape.channels + c] = v;
    }
  }
  return img;
}

/// one-hot(shape_kind) ++ raw attributes ++ sinusoidal position features,
/// padded with zeros or truncated to cond_dim.
inline Condition encode_condition(const GlyphSpec& s, int cond_dim) {
  detail::require(cond_dim >= 1, "encode_condition: cond_dim must be >= 1");
  std::vector<double> f(kShapeKinds, 0.0);
  f[static_cast<std::size_t>(s.shape_kind)] = 1.0;
  for (double a : attributes(s)) f.push_back(a);
  constexpr double kTau = 2.0 * std::numbers::pi;
  for (double freq : {2.0, 7.0}) {
    f.push_back(std::sin(kTau * freq * s.center_row));
    f.push_back(std::cos(kTau * freq * s.center_row));
    f.push_back(std::sin(kTau * freq * s.center_col));
    f.push_back(std::cos(kTau * freq * s.center_col));
  }
  Condition c;
  c.provenance = Provenance::ground_truth;
  c.embedding = Vector::Zero(cond_dim);
  for (int i = 0; i < cond_dim && i < int(f.size()); ++i) c.embedding[i] = f[std::size_t(i)];
  return c;
}

inline int quantization_levels(double fidelity) {
  return int(std::ceil(2.0 + 6.0 * fidelity - 1e-12));
}

/// Degraded spec: each continuous attribute is snapped to a grid of
/// ceil(2 + 6 * fidelity) levels over its valid range, then jittered by
/// Gaussian noise of standard deviation 0.25 * (1 - fidelity) in units of the
/// range, and clamped back into range. The shape kind is kept.
inline GlyphSpec approximate_spec(const GlyphSpec& spec, double fidelity, std::uint64_t seed) {
  if (!(fidelity >= 0.0 && fidelity <= 1.0))
    throw ConfigError("approximate_condition: fidelity must lie in [0,1]");
  const int levels = quantization_levels(fidelity);
  const double noise_scale = 0.25 * (1.0 - fidelity);
  Engine eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto a = attributes(spec);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto [lo, hi] = kAttributeRanges[k];
    double u = std::clamp((a[k] - lo) / (hi - lo), 0.0, 1.0);
    u = std::round(u * (levels - 1)) / double(levels - 1);
    const double jitter = normal(eng);  // always drawn so streams stay aligned
    if (noise_scale > 0.0) u += noise_scale * jitter;
    a[k] = lo + std::clamp(u, 0.0, 1.0) * (hi - lo);
  }
  return with_attributes(spec, a);
}

inline Condition approximate_condition(const GlyphSpec& spec, double fidelity, std::uint64_t seed,
                                       int cond_dim) {
  Condition c = encode_condition(approximate_spec(spec, fidelity, seed), cond_dim);
  c.provenance = Provenance::approximate;
  return c;
}

inline GlyphSpec sample_glyph(Engine& eng) {
  std::uniform_int_distribution<int> kind(0, kShapeKinds - 1);
  std::uniform_real_distribution<double> center(kGeneratorCenterRange.lo, kGeneratorCenterRange.hi);
  GlyphSpec s;
  s.shape_kind = static_cast<ShapeKind>(kind(eng));
  s.center_row = center(eng);
  s.center_col = center(eng);
  s.radius = std::uniform_real_distribution<double>(kAttributeRanges[2].lo, kAttributeRanges[2].hi)(eng);
  s.intensity =
      std::uniform_real_distribution<double>(kAttributeRanges[3].lo, kAttributeRanges[3].hi)(eng);
  s.background =
      std::uniform_real_distribution<double>(kAttributeRanges[4].lo, kAttributeRanges[4].hi)(eng);
  return s;
}

/// Ground-truth-style condition of an unrelated, freshly drawn glyph.
inline Condition random_condition(std::uint64_t seed, int cond_dim) {
  Engine eng(seed);
  Condition c = encode_condition(sample_glyph(eng), cond_dim);
  c.provenance = Provenance::random;
  return c;
}

enum class Split { member, holdout };

inline const char* to_string(Split s) { return s == Split::member ? "member" : "holdout"; }

inline Split split_from_string(const std::string& s) {
  if (s == "member") return Split::member;
  if (s == "holdout") return Split::holdout;
  throw ConfigError("unknown split label '" + s + "'");
}

struct Sample {
  std::uint64_t id = 0;
  Split split = Split::member;
  GlyphSpec spec;
  Vector image;
};

struct DatasetConfig {
  Shape shape;
  int n_member = 64;
  int n_holdout = 64;
  int cond_dim = 16;
  std::uint64_t seed = 0;

  bool operator==(const DatasetConfig&) const = default;
};

/// Sample ids 0..n_member-1 are members, the rest hold-outs; each spec comes
/// from its own substream so the two splits share one distribution.
inline std::vector<Sample> generate_dataset(const DatasetConfig& cfg) {
  if (cfg.n_member < 0 || cfg.n_holdout < 0) throw ConfigError("dataset split sizes must be >= 0");
  if (cfg.shape.height < 1 || cfg.shape.width < 1 || cfg.shape.channels < 1)
    throw ConfigError("dataset image shape must be positive");
  std::vector<Sample> out;
  const int total = cfg.n_member + cfg.n_holdout;
  out.reserve(std::size_t(total));
  for (int i = 0; i < total; ++i) {
    Engine eng = make_engine(cfg.seed, Purpose::kDataset, std::uint64_t(i));
    Sample s;
    s.id = std::uint64_t(i);
    s.split = i < cfg.n_member ? Split::member : Split::holdout;
    s.spec = sample_glyph(eng);
    s.image = render(s.spec, cfg.shape);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sample> select_split(const std::vector<Sample>& samples, Split split) {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

}  // namespace mofit
