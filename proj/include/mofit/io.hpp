#pragma once

// On-disk formats: MOFITCKPT1 checkpoints, dataset manifest + blob, attack
// record CSV, loss curves. Every writer goes through atomic_write.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "mofit/attacks.hpp"
#include "mofit/errors.hpp"
#include "mofit/model.hpp"
#include "mofit/synthdata.hpp"

namespace mofit {

using Json = nlohmann::json;
namespace fs = std::filesystem;

#ifndef MOFIT_BUILD_ID
#define MOFIT_BUILD_ID "dev"
#endif

inline std::string build_id() { return MOFIT_BUILD_ID; }

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// files

/// Writes to a sibling temp file, then renames over the target.
inline void atomic_write(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw ConfigError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

/// Reads a whole file. A missing file is reported with the step that makes it.
inline std::string read_file(const fs::path& path, const std::string& produced_by = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::string msg = "missing input file '" + path.string() + "'";
    if (!produced_by.empty()) msg += " (produce it with `mofit " + produced_by + "` first)";
    throw ConfigError(msg);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// little-endian f64 blobs

inline void append_f64_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(char((bits >> (8 * b)) & 0xFF));
}

inline double read_f64_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(char((v >> (8 * b)) & 0xFF));
}

inline std::uint64_t read_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= std::uint64_t(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

// ---------------------------------------------------------------------------
// checkpoints
//
// "MOFITCKPT1" | u64 LE header length | JSON header | f64 LE blobs.
// Tensor offsets in the header are byte offsets from the start of the blob
// section; matrices are stored row-major.

inline constexpr std::string_view kCheckpointMagic = "MOFITCKPT1";

inline Json arch_to_json(const Arch& a) {
  return {{"shape", {a.shape.height, a.shape.width, a.shape.channels}},
          {"hidden", a.hidden},
          {"time_dim", a.time_dim},
          {"cond_dim", a.cond_dim}};
}

inline Arch arch_from_json(const Json& j) {
  Arch a;
  a.shape = {j.at("shape").at(0).get<int>(), j.at("shape").at(1).get<int>(), j.at("shape").at(2).get<int>()};
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.time_dim = j.at("time_dim").get<int>();
  a.cond_dim = j.at("cond_dim").get<int>();
  return a;
}

inline std::string serialize_checkpoint(const DenoiserModel& model, const Json& meta = Json::object()) {
  Json header;
  header["arch"] = arch_to_json(model.arch());
  header["meta"] = meta;
  Json tensors = Json::array();
  std::string blob;
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    const Layer& l = model.layers()[k];
    const std::string base = "layers." + std::to_string(k) + ".";
    tensors.push_back({{"name", base + "weight"}, {"shape", {l.weight.rows(), l.weight.cols()}}, {"offset", blob.size()}});
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) append_f64_le(blob, l.weight(r, c));
    tensors.push_back({{"name", base + "bias"}, {"shape", {l.bias.size()}}, {"offset", blob.size()}});
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) append_f64_le(blob, l.bias[r]);
  }
  header["tensors"] = tensors;
  const std::string hj = header.dump();
  std::string out(kCheckpointMagic);
  append_u64_le(out, hj.size());
  out += hj;
  out += blob;
  return out;
}

struct LoadedCheckpoint {
  DenoiserModel model;
  Json meta;
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  const std::size_t m = kCheckpointMagic.size();
  if (bytes.size() < m + 8 || bytes.compare(0, m, kCheckpointMagic) != 0)
    throw ConfigError("not a MOFITCKPT1 checkpoint");
  const std::uint64_t hlen = read_u64_le(bytes.data() + m);
  if (hlen > bytes.size() - m - 8) throw ConfigError("checkpoint header length exceeds file size");
  Json header;
  try {
    header = Json::parse(bytes.substr(m + 8, hlen));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::size_t blob0 = m + 8 + hlen;
  DenoiserModel model(arch_from_json(header.at("arch")));
  auto fetch = [&](const Json& t, Eigen::Index count) {
    const std::size_t off = t.at("offset").get<std::size_t>();
    if (blob0 + off + std::size_t(count) * 8 > bytes.size())
      throw ConfigError("checkpoint tensor '" + t.at("name").get<std::string>() + "' is truncated");
    return bytes.data() + blob0 + off;
  };
  const Json& tensors = header.at("tensors");
  if (tensors.size() != 2 * model.layers().size())
    throw ConfigError("checkpoint tensor manifest does not match its architecture");
  for (std::size_t k = 0; k < model.layers().size(); ++k) {
    Layer& l = model.layers()[k];
    const Json& tw = tensors.at(2 * k);
    const Json& tb = tensors.at(2 * k + 1);
    if (tw.at("shape").at(0).get<Eigen::Index>() != l.weight.rows() ||
        tw.at("shape").at(1).get<Eigen::Index>() != l.weight.cols() ||
        tb.at("shape").at(0).get<Eigen::Index>() != l.bias.size())
      throw ConfigError("checkpoint tensor shapes do not match its architecture");
    const char* pw = fetch(tw, l.weight.size());
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = read_f64_le(pw + 8 * (r * l.weight.cols() + c));
    const char* pb = fetch(tb, l.bias.size());
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = read_f64_le(pb + 8 * r);
  }
  return {std::move(model), header.value("meta", Json::object())};
}

inline void save_checkpoint(const fs::path& path, const DenoiserModel& model, const Json& meta = Json::object()) {
  atomic_write(path, serialize_checkpoint(model, meta));
}

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
  return parse_checkpoint(read_file(path, "train"));
}

// ---------------------------------------------------------------------------
// datasets: <dir>/dataset.json + <dir>/dataset.bin (images in manifest order)

inline Json spec_to_json(const GlyphSpec& s) {
  return {{"shape_kind", to_string(s.shape_kind)},
          {"center", {s.center_row, s.center_col}},
          {"radius", s.radius},
          {"intensity", s.intensity},
          {"background", s.background}};
}

inline GlyphSpec spec_from_json(const Json& j) {
  GlyphSpec s;
  s.shape_kind = shape_kind_from_string(j.at("shape_kind").get<std::string>());
  s.center_row = j.at("center").at(0).get<double>();
  s.center_col = j.at("center").at(1).get<double>();
  s.radius = j.at("radius").get<double>();
  s.intensity = j.at("intensity").get<double>();
  s.background = j.at("background").get<double>();
  return s;
}

inline void save_dataset(const fs::path& dir, const DatasetConfig& cfg, const std::vector<Sample>& samples,
                         const Json& meta = Json::object()) {
  Json manifest;
  manifest["config"] = {{"shape", {cfg.shape.height, cfg.shape.width, cfg.shape.channels}},
                        {"n_member", cfg.n_member},
                        {"n_holdout", cfg.n_holdout},
                        {"cond_dim", cfg.cond_dim},
                        {"seed", cfg.seed}};
  manifest["meta"] = meta;
  manifest["blob"] = "dataset.bin";
  Json items = Json::array();
  std::string blob;
  for (const auto& s : samples) {
    items.push_back({{"id", s.id}, {"split", to_string(s.split)}, {"spec", spec_to_json(s.spec)}});
    for (Eigen::Index i = 0; i < s.image.size(); ++i) append_f64_le(blob, s.image[i]);
  }
  manifest["samples"] = items;
  atomic_write(dir / "dataset.bin", blob);
  atomic_write(dir / "dataset.json", manifest.dump(1));
}

struct LoadedDataset {
  DatasetConfig config;
  std::vector<Sample> samples;
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  const Json manifest = Json::parse(read_file(dir / "dataset.json", "synth"));
  const std::string blob = read_file(dir / manifest.value("blob", std::string("dataset.bin")), "synth");
  LoadedDataset d;
  const Json& c = manifest.at("config");
  d.config.shape = {c.at("shape").at(0).get<int>(), c.at("shape").at(1).get<int>(), c.at("shape").at(2).get<int>()};
  d.config.n_member = c.at("n_member").get<int>();
  d.config.n_holdout = c.at("n_holdout").get<int>();
  d.config.cond_dim = c.at("cond_dim").get<int>();
  d.config.seed = c.at("seed").get<std::uint64_t>();
  const Eigen::Index n = d.config.shape.size();
  const auto& items = manifest.at("samples");
  if (blob.size() != items.size() * std::size_t(n) * 8)
    throw ConfigError("dataset.bin size does not match dataset.json");
  std::size_t pos = 0;
  for (const auto& it : items) {
    Sample s;
    s.id = it.at("id").get<std::uint64_t>();
    s.split = split_from_string(it.at("split").get<std::string>());
    s.spec = spec_from_json(it.at("spec"));
    s.image.resize(n);
    for (Eigen::Index i = 0; i < n; ++i, pos += 8) s.image[i] = read_f64_le(blob.data() + pos);
    d.samples.push_back(std::move(s));
  }
  return d;
}

// ---------------------------------------------------------------------------
// attack-record CSV

inline constexpr std::string_view kRecordColumns =
    "sample_id,split,l_uncond,l_cond_gt,l_cond_approx,l_cond_phi_star,score_mofit,score_clid_gt,"
    "score_clid_approx,score_loss,iter_surrogate,iter_embed,final_loss_surrogate,final_loss_embed";

/// One '#' comment line carrying provenance, then the header, then one row per
/// record. Failed queries keep their id and split with every other cell empty.
inline std::string records_to_csv(const std::vector<AttackRecord>& records, const std::string& comment = "") {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += kRecordColumns;
  out += '\n';
  auto cell = [&](const std::optional<double>& v) {
    out += ',';
    if (v) out += format_double(*v);
  };
  for (const auto& r : records) {
    out += std::to_string(r.sample_id) + ',' + to_string(r.split);
    if (!r.ok()) {
      out += std::string(12, ',') + '\n';
      continue;
    }
    cell(r.l_uncond);
    cell(r.l_cond_gt);
    cell(r.l_cond_approx);
    cell(r.l_cond_phi_star);
    cell(r.score_mofit);
    cell(r.score_clid_gt);
    cell(r.score_clid_approx);
    cell(r.score_loss);
    out += ',' + std::to_string(r.iter_surrogate) + ',' + std::to_string(r.iter_embed);
    cell(r.final_loss_surrogate);
    cell(r.final_loss_embed);
    out += '\n';
  }
  return out;
}

/// Parsed CSV rows: all numeric cells as optional doubles, keyed by column.
struct RecordTable {
  std::vector<std::uint64_t> ids;
  std::vector<Split> labels;
  std::map<std::string, std::vector<std::optional<double>>> cells;
  std::string comment;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline RecordTable parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  RecordTable t;
  std::vector<std::string> header;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (t.comment.empty()) t.comment = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
      continue;
    }
    auto fields = split_csv_line(line);
    if (header.empty()) {
      header = fields;
      if (header.size() < 2 || header[0] != "sample_id" || header[1] != "split")
        throw ConfigError("attack CSV header must start with sample_id,split");
      for (std::size_t k = 2; k < header.size(); ++k) t.cells[header[k]];
      continue;
    }
    if (fields.size() != header.size())
      throw ConfigError("attack CSV line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                        " cells, expected " + std::to_string(header.size()));
    try {
      t.ids.push_back(std::stoull(fields[0]));
    } catch (const std::exception&) {
      throw ConfigError("attack CSV line " + std::to_string(line_no) + ": bad sample_id");
    }
    t.labels.push_back(split_from_string(fields[1]));
    for (std::size_t k = 2; k < header.size(); ++k) {
      std::optional<double> v;
      if (!fields[k].empty()) {
        char* end = nullptr;
        v = std::strtod(fields[k].c_str(), &end);
        if (end == fields[k].c_str() || *end != '\0')
          throw ConfigError("attack CSV line " + std::to_string(line_no) + ": bad number in " + header[k]);
      }
      t.cells[header[k]].push_back(v);
    }
  }
  if (header.empty()) throw ConfigError("attack CSV is empty");
  return t;
}

inline std::string loss_curve_csv(const std::vector<double>& losses, const std::string& comment = "") {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out += std::to_string(i) + ',' + format_double(losses[i]) + '\n';
  return out;
}

inline std::string traces_csv(const std::vector<AttackRecord>& records, const std::string& comment = "") {
  std::string out;
  if (!comment.empty()) out += "# " + comment + "\n";
  out += "sample_id,stage,iteration,loss\n";
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.surrogate_trace.size(); ++i)
      out += std::to_string(r.sample_id) + ",surrogate," + std::to_string(i) + ',' + format_double(r.surrogate_trace[i]) + '\n';
    for (std::size_t i = 0; i < r.embed_trace.size(); ++i)
      out += std::to_string(r.sample_id) + ",embedding," + std::to_string(i) + ',' + format_double(r.embed_trace[i]) + '\n';
  }
  return out;
}

}  // namespace mofit
