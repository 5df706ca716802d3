#pragma once

// Run configuration: a JSON tree with a default for every key, a config file
// merged over it, then `--section.key=value` overrides. Unknown keys and type
// changes are rejected so typos fail loudly.

#include <cstdint>
#include <string>
#include <vector>

#include "mofit/attacks.hpp"
#include "mofit/io.hpp"
#include "mofit/metrics.hpp"
#include "mofit/model.hpp"
#include "mofit/schedule.hpp"
#include "mofit/synthdata.hpp"
#include "mofit/trainer.hpp"

namespace mofit {

inline Json default_config() {
  return Json::parse(R"({
  "master_seed": 0,
  "output_dir": "runs/default",
  "dataset": {"height": 16, "width": 16, "channels": 1, "n_member": 64, "n_holdout": 64, "cond_dim": 16},
  "model": {"hidden": [256, 256], "time_dim": 32},
  "schedule": {"T": 1000, "beta_start": 0.0001, "beta_end": 0.02},
  "train": {"steps": 20000, "batch_size": 32, "learning_rate": 0.001, "cfg_drop_prob": 0.1,
            "blur": false, "blur_sigma_lo": 0.1, "blur_sigma_hi": 2.0},
  "surrogate": {"t_star": 140, "alpha0": 0.15, "iters": 1000, "delta_init_range": 0.3,
                "early_stop_loss": null, "eps_seed": 0, "clamp": true},
  "embedding": {"lr": 0.06, "iters": 200, "early_stop_loss": null},
  "attack": {"approx_fidelity": 0.5, "use_ground_truth": true, "workers": 1,
             "mode": "model_fitted", "eps_noise": 0.0, "write_traces": false},
  "fusion": {"gamma_step": 0.05, "aux_column": "l_uncond", "calibration": "pooled", "subset_fraction": 0.5},
  "metrics": {"fpr_cap": 0.01, "kde_grid_points": 512},
  "oracle": {"endpoint": "", "retries": 3, "max_in_flight": 4},
  "gradcheck": {"models": 20, "probes": 32, "h": 1e-05, "tolerance": 1e-06},
  "ablate": {"eps_noise": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]},
  "stability": {"eps_seeds": [0, 1, 2, 3]},
  "early_stop": {"fractions": [0.1, 0.2, 0.4]}
})");
}

namespace detail {

inline bool same_kind(const Json& def, const Json& v) {
  if (def.is_null()) return v.is_null() || v.is_number();
  if (def.is_number()) return v.is_number() && !(def.is_number_integer() && v.is_number_float());
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return false;
}

inline void merge_checked(Json& base, const Json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value())) throw ConfigError("config key '" + key + "' has the wrong type");
      slot = it.value();
    }
  }
}

}  // namespace detail

/// Merges a JSON document over the current config.
inline void apply_config_json(Json& cfg, const Json& patch) { detail::merge_checked(cfg, patch, ""); }

/// `section.key=value`. The value is read as JSON when it parses as JSON,
/// otherwise as a bare string.
inline void apply_override(Json& cfg, const std::string& assignment) {
  std::string a = assignment;
  if (a.rfind("--", 0) == 0) a = a.substr(2);
  const auto eq = a.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = a.substr(0, eq);
  const std::string text = a.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json patch = value;
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  apply_config_json(cfg, patch);
}

inline Json load_config(const std::string& file, const std::vector<std::string>& overrides) {
  Json cfg = default_config();
  if (!file.empty()) {
    Json doc = Json::parse(read_file(file), nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file '" + file + "' is not valid JSON");
    apply_config_json(cfg, doc);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

inline std::string serialize_config(const Json& cfg) { return cfg.dump(2) + "\n"; }

inline Json parse_config(const std::string& text) {
  Json cfg = default_config();
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config text is not valid JSON");
  apply_config_json(cfg, doc);
  return cfg;
}

/// Hash of the resolved config; the output directory is left out so moving a
/// run does not change it.
inline std::string config_hash(const Json& cfg) {
  Json c = cfg;
  c.erase("output_dir");
  return hex64(fnv1a(c.dump()));
}

inline std::string provenance_line(const Json& cfg) {
  return "config_hash=" + config_hash(cfg) + " build=" + build_id();
}

// ---------------------------------------------------------------------------
// typed views

template <class T>
T cfg_get(const Json& cfg, const char* section, const char* key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string("config key '") + section + "." + key + "' is missing or has the wrong type");
  }
}

inline std::optional<double> cfg_optional(const Json& cfg, const char* section, const char* key) {
  const Json& v = cfg.at(section).at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

inline std::uint64_t master_seed(const Json& cfg) {
  try {
    return cfg.at("master_seed").get<std::uint64_t>();
  } catch (const Json::exception&) {
    throw ConfigError("master_seed must be a non-negative integer");
  }
}

inline DatasetConfig dataset_config(const Json& cfg) {
  DatasetConfig d;
  d.shape = {cfg_get<int>(cfg, "dataset", "height"), cfg_get<int>(cfg, "dataset", "width"),
             cfg_get<int>(cfg, "dataset", "channels")};
  d.n_member = cfg_get<int>(cfg, "dataset", "n_member");
  d.n_holdout = cfg_get<int>(cfg, "dataset", "n_holdout");
  d.cond_dim = cfg_get<int>(cfg, "dataset", "cond_dim");
  d.seed = master_seed(cfg);
  if (d.cond_dim < 1) throw ConfigError("dataset.cond_dim must be >= 1");
  return d;
}

inline Arch arch_config(const Json& cfg) {
  Arch a;
  const DatasetConfig d = dataset_config(cfg);
  a.shape = d.shape;
  a.cond_dim = d.cond_dim;
  a.hidden = cfg_get<std::vector<int>>(cfg, "model", "hidden");
  a.time_dim = cfg_get<int>(cfg, "model", "time_dim");
  for (int h : a.hidden)
    if (h < 1) throw ConfigError("model.hidden widths must be >= 1");
  if (a.time_dim < 0 || a.time_dim % 2 != 0) throw ConfigError("model.time_dim must be even and >= 0");
  return a;
}

inline NoiseSchedule schedule_config(const Json& cfg) {
  return build_schedule(cfg_get<int>(cfg, "schedule", "T"), cfg_get<double>(cfg, "schedule", "beta_start"),
                        cfg_get<double>(cfg, "schedule", "beta_end"));
}

inline TrainConfig train_config(const Json& cfg) {
  TrainConfig t;
  t.steps = cfg_get<int>(cfg, "train", "steps");
  t.batch_size = cfg_get<int>(cfg, "train", "batch_size");
  t.learning_rate = cfg_get<double>(cfg, "train", "learning_rate");
  t.cfg_drop_prob = cfg_get<double>(cfg, "train", "cfg_drop_prob");
  if (cfg_get<bool>(cfg, "train", "blur"))
    t.blur = BlurAugment{cfg_get<double>(cfg, "train", "blur_sigma_lo"), cfg_get<double>(cfg, "train", "blur_sigma_hi")};
  t.master_seed = master_seed(cfg);
  validate(t);
  return t;
}

inline SurrogateConfig surrogate_config(const Json& cfg) {
  SurrogateConfig s;
  s.t_star = cfg_get<int>(cfg, "surrogate", "t_star");
  s.alpha0 = cfg_get<double>(cfg, "surrogate", "alpha0");
  s.iters = cfg_get<int>(cfg, "surrogate", "iters");
  s.delta_init_range = cfg_get<double>(cfg, "surrogate", "delta_init_range");
  s.early_stop_loss = cfg_optional(cfg, "surrogate", "early_stop_loss");
  s.eps_seed = cfg_get<std::uint64_t>(cfg, "surrogate", "eps_seed");
  s.clamp = cfg_get<bool>(cfg, "surrogate", "clamp");
  return s;
}

inline EmbeddingConfig embedding_config(const Json& cfg) {
  EmbeddingConfig e;
  e.lr = cfg_get<double>(cfg, "embedding", "lr");
  e.iters = cfg_get<int>(cfg, "embedding", "iters");
  e.early_stop_loss = cfg_optional(cfg, "embedding", "early_stop_loss");
  validate(e);
  return e;
}

inline AttackSuiteConfig suite_config(const Json& cfg) {
  AttackSuiteConfig a;
  a.surrogate = surrogate_config(cfg);
  a.embedding = embedding_config(cfg);
  a.variant.mode = surrogate_mode_from_string(cfg_get<std::string>(cfg, "attack", "mode"));
  a.variant.eps_noise = cfg_get<double>(cfg, "attack", "eps_noise");
  a.approx_fidelity = cfg_get<double>(cfg, "attack", "approx_fidelity");
  if (!(a.approx_fidelity >= 0.0 && a.approx_fidelity <= 1.0))
    throw ConfigError("attack.approx_fidelity must lie in [0,1]");
  a.use_ground_truth = cfg_get<bool>(cfg, "attack", "use_ground_truth");
  a.workers = cfg_get<int>(cfg, "attack", "workers");
  if (a.workers < 1) throw ConfigError("attack.workers must be >= 1");
  a.master_seed = master_seed(cfg);
  return a;
}

inline FusionConfig fusion_config(const Json& cfg) {
  FusionConfig f;
  f.gamma_step = cfg_get<double>(cfg, "fusion", "gamma_step");
  gamma_count(f.gamma_step);
  f.aux_column = cfg_get<std::string>(cfg, "fusion", "aux_column");
  if (f.aux_column != "l_uncond" && f.aux_column != "score_clid_approx")
    throw ConfigError("fusion.aux_column must be l_uncond or score_clid_approx");
  const auto cal = cfg_get<std::string>(cfg, "fusion", "calibration");
  if (cal == "pooled")
    f.calibration = Calibration::pooled;
  else if (cal == "subset")
    f.calibration = Calibration::subset;
  else
    throw ConfigError("fusion.calibration must be pooled or subset");
  f.subset_fraction = cfg_get<double>(cfg, "fusion", "subset_fraction");
  return f;
}

}  // namespace mofit
