#pragma once

// Checkpoint file layout (little-endian):
//   "TDCK" | u32 version | u32 record count
//   per record: u16 name length | name | u8 tag | u8 rank | u32 dims[rank] | f64 data
// Tags: 'P' 'G' 'C' parameter groups, 'O' optimizer moments, 'M' run metadata.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tdass/bytes.hpp"
#include "tdass/errors.hpp"
#include "tdass/model.hpp"
#include "tdass/optimizer.hpp"
#include "tdass/parameters.hpp"

namespace tdass {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Stage : std::uint8_t { Pretrain = 0, Finetune = 1 };

inline const char* stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "finetune"; }

/// Settings a checkpoint was produced with; evaluation needs them to reproduce the forward pass.
struct RunInfo {
  int target_speaker = -1;
  std::uint32_t budget = 0;
  bool use_classifier = false;
  bool use_xvector = true;
  std::uint32_t seed = 0;

  friend bool operator==(const RunInfo&, const RunInfo&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  ParameterStore params;
  OptimizerState optimizer;
  std::uint64_t global_step = 0;
  Stage stage = Stage::Pretrain;
  RunInfo run;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

constexpr std::uint8_t kTagOptimizer = 'O';
constexpr std::uint8_t kTagMeta = 'M';
inline const std::string kFirstMomentPrefix = "adam.m:";
inline const std::string kSecondMomentPrefix = "adam.v:";

inline void write_record(ByteWriter& w, const std::string& name, std::uint8_t tag, const Tensor& t) {
  if (name.size() > 0xffff) throw ContractError("checkpoint record name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(tag);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) w.f64(v);
}

inline Tensor meta_vector(std::initializer_list<double> values) { return Tensor::vector(std::vector<double>(values)); }

inline std::size_t meta_count(double v, std::size_t offset) {
  if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
    throw FormatError("metadata value " + std::to_string(v) + " is not a count", offset);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig& c = ckpt.config;
  const auto& cd = c.classifier_dims;
  ByteWriter body;
  std::uint32_t count = 0;
  auto rec = [&](const std::string& name, std::uint8_t tag, const Tensor& t) {
    detail::write_record(body, name, tag, t);
    ++count;
  };
  rec("meta.config", detail::kTagMeta,
      detail::meta_vector({c.preset == "full-size" ? 1.0 : 0.0, double(c.n_phonemes), double(c.phoneme_embed_dim),
                           double(c.encoder_hidden), double(c.decoder_hidden), double(c.attention_dim),
                           double(c.n_mels), double(c.xvector_dim), double(cd[0].in), double(cd[0].out),
                           double(cd[1].in), double(cd[1].out), double(cd[2].in), double(cd[2].out)}));
  rec("meta.progress", detail::kTagMeta,
      detail::meta_vector({double(ckpt.stage), double(ckpt.global_step), double(ckpt.optimizer.step)}));
  rec("meta.run", detail::kTagMeta,
      detail::meta_vector({double(ckpt.run.target_speaker), double(ckpt.run.budget), ckpt.run.use_classifier ? 1.0 : 0.0,
                           ckpt.run.use_xvector ? 1.0 : 0.0, double(ckpt.run.seed)}));
  for (const auto& [name, entry] : ckpt.params) rec(name, static_cast<std::uint8_t>(entry.group), entry.value);
  for (const auto& [name, m] : ckpt.optimizer.first_moment) rec(detail::kFirstMomentPrefix + name, detail::kTagOptimizer, m);
  for (const auto& [name, v] : ckpt.optimizer.second_moment) rec(detail::kSecondMomentPrefix + name, detail::kTagOptimizer, v);

  ByteWriter w;
  w.bytes("TDCK");
  w.u32(ckpt.version);
  w.u32(count);
  w.bytes(body.buffer());
  return w.buffer();
}

/// Parses a whole checkpoint image; nothing is returned unless every byte validates.
inline Checkpoint parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "TDCK") throw FormatError("bad checkpoint magic", 0);
  r.bytes(4);
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version), 4);
  }
  const std::uint32_t count = r.u32();
  bool seen_config = false, seen_progress = false, seen_run = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t record_offset = r.offset();
    const std::uint16_t name_len = r.u16();
    const std::string name(r.bytes(name_len));
    const std::uint8_t tag = r.u8();
    const std::uint8_t rank = r.u8();
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0) throw FormatError("zero dimension in record '" + name + "'", r.offset() - 4);
      shape.push_back(dim);
    }
    const std::size_t n = shape_size(shape);
    if (n > (bytes.size() - r.offset()) / 8) throw FormatError("truncated data for record '" + name + "'", r.offset());
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    Tensor t(std::move(shape), std::move(data));

    switch (tag) {
      case 'P':
      case 'G':
      case 'C':
        ckpt.params.add(name, static_cast<Group>(tag), std::move(t));
        break;
      case detail::kTagOptimizer:
        if (name.starts_with(detail::kFirstMomentPrefix)) {
          ckpt.optimizer.first_moment.emplace(name.substr(detail::kFirstMomentPrefix.size()), std::move(t));
        } else if (name.starts_with(detail::kSecondMomentPrefix)) {
          ckpt.optimizer.second_moment.emplace(name.substr(detail::kSecondMomentPrefix.size()), std::move(t));
        } else {
          throw FormatError("unknown optimizer record '" + name + "'", record_offset);
        }
        break;
      case detail::kTagMeta: {
        const auto v = t.data();
        if (name == "meta.config" && v.size() == 14) {
          ModelConfig& c = ckpt.config;
          c.preset = detail::meta_count(v[0], record_offset) == 1 ? "full-size" : "toy";
          c.n_phonemes = detail::meta_count(v[1], record_offset);
          c.phoneme_embed_dim = detail::meta_count(v[2], record_offset);
          c.encoder_hidden = detail::meta_count(v[3], record_offset);
          c.decoder_hidden = detail::meta_count(v[4], record_offset);
          c.attention_dim = detail::meta_count(v[5], record_offset);
          c.n_mels = detail::meta_count(v[6], record_offset);
          c.xvector_dim = detail::meta_count(v[7], record_offset);
          for (std::size_t l = 0; l < 3; ++l) {
            c.classifier_dims[l] = {detail::meta_count(v[8 + 2 * l], record_offset),
                                    detail::meta_count(v[9 + 2 * l], record_offset)};
          }
          seen_config = true;
        } else if (name == "meta.progress" && v.size() == 3) {
          const std::size_t stage = detail::meta_count(v[0], record_offset);
          if (stage > 1) throw FormatError("unknown stage tag", record_offset);
          ckpt.stage = static_cast<Stage>(stage);
          ckpt.global_step = detail::meta_count(v[1], record_offset);
          ckpt.optimizer.step = detail::meta_count(v[2], record_offset);
          seen_progress = true;
        } else if (name == "meta.run" && v.size() == 5) {
          ckpt.run.target_speaker = static_cast<int>(v[0]);
          ckpt.run.budget = static_cast<std::uint32_t>(detail::meta_count(v[1], record_offset));
          ckpt.run.use_classifier = v[2] != 0.0;
          ckpt.run.use_xvector = v[3] != 0.0;
          ckpt.run.seed = static_cast<std::uint32_t>(detail::meta_count(v[4], record_offset));
          seen_run = true;
        } else {
          throw FormatError("unknown metadata record '" + name + "'", record_offset);
        }
        break;
      }
      default:
        throw FormatError("unknown record tag " + std::to_string(tag) + " for '" + name + "'", record_offset);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after last record", r.offset());
  if (!seen_config || !seen_progress || !seen_run) throw FormatError("checkpoint lacks metadata records", r.offset());
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model config: ") + e.what(), 12);
  }
  return ckpt;
}

/// Plain key=value description of a checkpoint, written next to it.
inline std::string checkpoint_manifest(const Checkpoint& ckpt) {
  const ModelConfig& c = ckpt.config;
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  kv("format_version", std::to_string(ckpt.version));
  kv("stage", stage_name(ckpt.stage));
  kv("global_step", std::to_string(ckpt.global_step));
  kv("preset", c.preset);
  kv("n_phonemes", std::to_string(c.n_phonemes));
  kv("n_mels", std::to_string(c.n_mels));
  kv("xvector_dim", std::to_string(c.xvector_dim));
  kv("target_speaker", std::to_string(ckpt.run.target_speaker));
  kv("budget", std::to_string(ckpt.run.budget));
  kv("use_classifier", ckpt.run.use_classifier ? "1" : "0");
  kv("use_xvector", ckpt.run.use_xvector ? "1" : "0");
  kv("seed", std::to_string(ckpt.run.seed));
  kv("parameters", std::to_string(ckpt.params.scalar_count()));
  return s;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
  write_file_bytes(path.string() + ".manifest", checkpoint_manifest(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file_bytes(path)); }

}  // namespace tdass
