#pragma once

// Synthetic multi-speaker corpus and its on-disk layout:
//   manifest.tsv     utt_id \t speaker_id \t split \t relative_path
//   utt/<id>.tdsu    "TDSU" | u32 version | u32 n_phonemes | u16 ids | u32 n_frames | u32 n_mels | f32 mel
//   xvectors.tsv     speaker_id \t v0 v1 ... (%.17g)
//   corpus.cfg       key=value generation settings

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tdass/bytes.hpp"
#include "tdass/dsp.hpp"
#include "tdass/errors.hpp"
#include "tdass/tensor.hpp"
#include "tdass/utterance.hpp"

namespace tdass {

inline constexpr std::uint32_t kUtteranceVersion = 1;

/// How one synthetic voice departs from the shared phoneme templates.
struct SpeakerTimbre {
  std::vector<double> offset;   // added to every frame, one value per mel bin
  double tilt = 0.0;            // template gain ramps from (1 - tilt/2) at bin 0 to (1 + tilt/2) at the top bin
  double duration_scale = 1.0;  // multiplies every phoneme's frame count
};

struct SyntheticCorpusConfig {
  // Train-split utterances per speaker; the real corpus had 4019 / 20257 / 8915 recordings.
  std::vector<std::size_t> train_utterances{120, 120, 40};
  std::vector<double> duration_scales;  // optional per-speaker override
  std::size_t val_per_speaker = 4;
  std::size_t test_per_speaker = 20;
  std::size_t n_phonemes = 24;
  std::size_t n_mels = 20;
  std::size_t min_phonemes = 3;
  std::size_t max_phonemes = 7;
  std::size_t min_frames = 2;
  std::size_t max_frames = 80;
  std::size_t xvector_dim = 16;
  double noise_std = 0.05;
  std::uint64_t seed = 42;

  std::size_t n_speakers() const { return train_utterances.size(); }

  void validate() const {
    if (n_speakers() < 3) throw ConfigError("synthetic corpus needs at least 3 speakers (1 target + 2 pretrain)");
    if (!duration_scales.empty() && duration_scales.size() != n_speakers()) {
      throw ConfigError("duration scale list must have one entry per speaker");
    }
    for (double s : duration_scales) {
      if (!(s > 0.0)) throw ConfigError("duration scales must be positive");
    }
    if (n_phonemes == 0 || n_phonemes > 65535 || n_mels < 14) {
      throw ConfigError("need 1..65535 phonemes and at least 14 mel bins");
    }
    if (min_phonemes == 0 || min_phonemes > max_phonemes) throw ConfigError("bad phoneme length range");
    if (min_frames == 0 || min_frames > max_frames) throw ConfigError("bad frame count range");
    if (noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
  }
};

/// Parses "120,120,40" or "120:1.0,120:1.2,40:0.9" (count:duration-scale).
inline void apply_speaker_spec(SyntheticCorpusConfig& cfg, const std::string& spec) {
  cfg.train_utterances.clear();
  cfg.duration_scales.clear();
  std::vector<double> scales;
  bool any_scale = false;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const std::string count_str = item.substr(0, colon);
    std::size_t count = 0;
    auto [p, ec] = std::from_chars(count_str.data(), count_str.data() + count_str.size(), count);
    if (ec != std::errc() || p != count_str.data() + count_str.size() || count == 0) {
      throw ConfigError("bad speaker spec entry '" + item + "'");
    }
    cfg.train_utterances.push_back(count);
    double scale = 0.0;
    if (colon != std::string::npos) {
      try {
        scale = std::stod(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("bad duration scale in '" + item + "'");
      }
      any_scale = true;
    }
    scales.push_back(scale);
  }
  if (any_scale) {
    for (double s : scales) {
      if (!(s > 0.0)) throw ConfigError("speaker spec gives a duration scale for some speakers but not all");
    }
    cfg.duration_scales = std::move(scales);
  }
}

/// Corpus held in memory, as produced by `synth_corpus` or read back by `load_corpus`.
struct Corpus {
  std::size_t n_phonemes = 0;
  std::size_t n_mels = 0;
  std::size_t xvector_dim = 0;
  std::vector<Utterance> utterances;
  std::map<int, Tensor> xvectors;

  std::vector<const Utterance*> select(int speaker, Split split) const {
    std::vector<const Utterance*> out;
    for (const auto& u : utterances) {
      if (u.speaker == speaker && u.split == split) out.push_back(&u);
    }
    return out;
  }

  std::vector<int> speakers() const {
    std::set<int> s;
    for (const auto& u : utterances) s.insert(u.speaker);
    return {s.begin(), s.end()};
  }

  const Utterance& find(const std::string& id) const {
    for (const auto& u : utterances) {
      if (u.id == id) return u;
    }
    throw DataError("no utterance with id '" + id + "'");
  }

  const Tensor& xvector(int speaker) const {
    auto it = xvectors.find(speaker);
    if (it == xvectors.end()) throw DataError("missing x-vector for speaker " + std::to_string(speaker));
    return it->second;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

namespace detail {

struct PhonemeTemplate {
  std::vector<double> shape;  // n_mels
  std::size_t frames = 3;
};

inline std::vector<PhonemeTemplate> phoneme_templates(const SyntheticCorpusConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0x7068));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PhonemeTemplate> out(cfg.n_phonemes);
  const double M = static_cast<double>(cfg.n_mels);
  for (auto& p : out) {
    p.shape.assign(cfg.n_mels, 0.0);
    for (int bump = 0; bump < 2; ++bump) {
      const double center = unit(rng) * (M - 1.0);
      const double width = 1.5 + 2.0 * unit(rng);
      const double amp = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.6 + 0.9 * unit(rng));
      for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double z = (static_cast<double>(m) - center) / width;
        p.shape[m] += amp * std::exp(-0.5 * z * z);
      }
    }
    p.frames = 2 + static_cast<std::size_t>(unit(rng) * 3.0);
  }
  return out;
}

}  // namespace detail

/// Seed-derived timbre for speaker `s`.
inline SpeakerTimbre speaker_timbre(const SyntheticCorpusConfig& cfg, std::size_t s) {
  Rng rng(detail::mix_seed(cfg.seed, 0x73706b, s));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SpeakerTimbre t;
  const double amp = 0.3 + 0.3 * unit(rng);
  const double freq = 0.5 + 1.5 * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const double level = 0.4 * (unit(rng) - 0.5);
  t.offset.resize(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    t.offset[m] = level + amp * std::cos(2.0 * std::numbers::pi * freq * static_cast<double>(m) /
                                             static_cast<double>(cfg.n_mels) + phase);
  }
  t.tilt = unit(rng) - 0.5;
  t.duration_scale = cfg.duration_scales.empty() ? 0.85 + 0.35 * unit(rng) : cfg.duration_scales[s];
  return t;
}

/// Frames for a phoneme sequence spoken with `timbre`; `noise_rng` may be null for a clean render.
inline Tensor render_mel(const SyntheticCorpusConfig& cfg, std::span<const std::uint16_t> phonemes,
                         const SpeakerTimbre& timbre, Rng* noise_rng) {
  const auto templates = detail::phoneme_templates(cfg);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  std::vector<double> frames;
  std::size_t count = 0;
  for (auto p : phonemes) {
    const auto& tpl = templates.at(p);
    const auto len = static_cast<std::size_t>(
        std::max<long>(1, std::lround(static_cast<double>(tpl.frames) * timbre.duration_scale)));
    for (std::size_t j = 0; j < len; ++j) {
      const double env = 0.75 + 0.25 * std::sin(std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(len));
      for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double gain = 1.0 + timbre.tilt * (static_cast<double>(m) / static_cast<double>(cfg.n_mels - 1) - 0.5);
        double v = tpl.shape[m] * env * gain + timbre.offset[m];
        if (noise_rng && cfg.noise_std > 0.0) v += noise(*noise_rng);
        frames.push_back(static_cast<double>(static_cast<float>(v)));
      }
      ++count;
    }
  }
  return Tensor({count, cfg.n_mels}, std::move(frames));
}

/// In-memory generation; `synth_corpus` writes this to disk.
inline Corpus generate_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.n_phonemes = cfg.n_phonemes;
  corpus.n_mels = cfg.n_mels;
  corpus.xvector_dim = cfg.xvector_dim;
  for (std::size_t s = 0; s < cfg.n_speakers(); ++s) {
    const SpeakerTimbre timbre = speaker_timbre(cfg, s);
    const std::size_t total = cfg.train_utterances[s] + cfg.val_per_speaker + cfg.test_per_speaker;
    for (std::size_t i = 0; i < total; ++i) {
      Rng rng(detail::mix_seed(cfg.seed, 0x757474 + s, i));
      std::uniform_int_distribution<std::size_t> len_dist(cfg.min_phonemes, cfg.max_phonemes);
      std::uniform_int_distribution<std::size_t> ph_dist(0, cfg.n_phonemes - 1);
      Utterance u;
      char id[32];
      std::snprintf(id, sizeof id, "s%zu_u%04zu", s, i);
      u.id = id;
      u.speaker = static_cast<int>(s);
      u.split = i < cfg.train_utterances[s] ? Split::Train
                : i < cfg.train_utterances[s] + cfg.val_per_speaker ? Split::Val
                                                                     : Split::Test;
      const std::size_t n = len_dist(rng);
      for (std::size_t k = 0; k < n; ++k) u.phonemes.push_back(static_cast<std::uint16_t>(ph_dist(rng)));
      u.mel = render_mel(cfg, u.phonemes, timbre, &rng);
      if (u.n_frames() < cfg.min_frames || u.n_frames() > cfg.max_frames) {
        throw ConfigError("utterance " + u.id + " has " + std::to_string(u.n_frames()) +
                          " frames, outside the configured range");
      }
      corpus.utterances.push_back(std::move(u));
    }
  }
  for (std::size_t s = 0; s < cfg.n_speakers(); ++s) {
    const auto train = corpus.select(static_cast<int>(s), Split::Train);
    corpus.xvectors.emplace(static_cast<int>(s),
                            pseudo_xvector(train, cfg.xvector_dim, detail::mix_seed(cfg.seed, 0x78766563)).vector);
  }
  return corpus;
}

inline std::string encode_utterance(const Utterance& u) {
  ByteWriter w;
  w.bytes("TDSU");
  w.u32(kUtteranceVersion);
  w.u32(static_cast<std::uint32_t>(u.phonemes.size()));
  for (auto p : u.phonemes) w.u16(p);
  w.u32(static_cast<std::uint32_t>(u.n_frames()));
  w.u32(static_cast<std::uint32_t>(u.n_mels()));
  for (double v : u.mel.data()) w.f32(static_cast<float>(v));
  return w.buffer();
}

/// Fills phonemes and mel; id, speaker and split come from the manifest.
inline void decode_utterance(std::string_view bytes, Utterance& u) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "TDSU") throw FormatError("bad utterance magic", 0);
  r.bytes(4);
  if (const auto v = r.u32(); v != kUtteranceVersion) {
    throw FormatError("unsupported utterance version " + std::to_string(v), 4);
  }
  const std::uint32_t n_ph = r.u32();
  if (n_ph == 0) throw FormatError("empty phoneme sequence", 8);
  std::vector<std::uint16_t> ph(n_ph);
  for (auto& p : ph) p = r.u16();
  const std::size_t dims_offset = r.offset();
  const std::uint32_t frames = r.u32();
  const std::uint32_t mels = r.u32();
  if (frames == 0 || mels == 0) throw FormatError("zero-sized mel", dims_offset);
  std::vector<double> data(static_cast<std::size_t>(frames) * mels);
  for (auto& v : data) v = r.f32();
  if (!r.done()) throw FormatError("trailing bytes in utterance file", r.offset());
  u.phonemes = std::move(ph);
  u.mel = Tensor({frames, mels}, std::move(data));
}

inline std::string utterance_relative_path(const Utterance& u) { return "utt/" + u.id + ".tdsu"; }

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes a corpus into an empty or absent directory.
inline void write_corpus(const Corpus& corpus, const SyntheticCorpusConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) throw ConfigError("output directory '" + dir.string() + "' is not empty");
  fs::create_directories(dir / "utt");
  std::string manifest;
  for (const auto& u : corpus.utterances) {
    write_file_bytes(dir / utterance_relative_path(u), encode_utterance(u));
    manifest += u.id + "\t" + std::to_string(u.speaker) + "\t" + split_name(u.split) + "\t" +
                utterance_relative_path(u) + "\n";
  }
  write_file_bytes(dir / "manifest.tsv", manifest);
  std::string xv;
  for (const auto& [spk, v] : corpus.xvectors) {
    xv += std::to_string(spk) + "\t";
    for (std::size_t i = 0; i < v.size(); ++i) xv += (i ? " " : "") + format_double(v[i]);
    xv += "\n";
  }
  write_file_bytes(dir / "xvectors.tsv", xv);
  std::string speakers;
  for (std::size_t s = 0; s < cfg.n_speakers(); ++s) {
    speakers += (s ? "," : "") + std::to_string(cfg.train_utterances[s]) + ":" +
                format_double(speaker_timbre(cfg, s).duration_scale);
  }
  std::string c;
  c += "format_version=1\n";
  c += "seed=" + std::to_string(cfg.seed) + "\n";
  c += "speakers=" + speakers + "\n";
  c += "val_per_speaker=" + std::to_string(cfg.val_per_speaker) + "\n";
  c += "test_per_speaker=" + std::to_string(cfg.test_per_speaker) + "\n";
  c += "n_phonemes=" + std::to_string(corpus.n_phonemes) + "\n";
  c += "n_mels=" + std::to_string(corpus.n_mels) + "\n";
  c += "xvector_dim=" + std::to_string(corpus.xvector_dim) + "\n";
  c += "noise_std=" + format_double(cfg.noise_std) + "\n";
  write_file_bytes(dir / "corpus.cfg", c);
}

inline Corpus synth_corpus(const SyntheticCorpusConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) throw ConfigError("output directory '" + dir.string() + "' is not empty");
  Corpus corpus = generate_corpus(cfg);
  write_corpus(corpus, cfg, dir);
  return corpus;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed line in " + path.string() + ": '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

namespace detail {
inline std::size_t kv_count(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("corpus.cfg lacks '" + key + "'");
  return std::stoul(it->second);
}

inline int parse_speaker(const std::string& s, const std::string& context) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 0) throw DataError("bad speaker id in " + context);
  return v;
}
}  // namespace detail

struct ManifestEntry {
  std::string utt_id;
  int speaker = 0;
  Split split = Split::Train;
  std::string relative_path;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::istringstream in(read_file_bytes(dir / "manifest.tsv"));
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.size() != 4) throw DataError("manifest line has " + std::to_string(cols.size()) + " columns: '" + line + "'");
    out.push_back({cols[0], detail::parse_speaker(cols[1], "manifest"), parse_split(cols[2]), cols[3]});
  }
  return out;
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  const auto kv = read_key_values(dir / "corpus.cfg");
  Corpus corpus;
  corpus.n_phonemes = detail::kv_count(kv, "n_phonemes");
  corpus.n_mels = detail::kv_count(kv, "n_mels");
  corpus.xvector_dim = detail::kv_count(kv, "xvector_dim");
  for (const auto& e : read_manifest(dir)) {
    Utterance u;
    u.id = e.utt_id;
    u.speaker = e.speaker;
    u.split = e.split;
    decode_utterance(read_file_bytes(dir / e.relative_path), u);
    if (u.n_mels() != corpus.n_mels) throw DataError("utterance " + u.id + " has wrong mel width");
    for (auto p : u.phonemes) {
      if (p >= corpus.n_phonemes) throw DataError("utterance " + u.id + " uses out-of-vocabulary phoneme");
    }
    corpus.utterances.push_back(std::move(u));
  }
  std::istringstream xin(read_file_bytes(dir / "xvectors.tsv"));
  std::string line;
  while (std::getline(xin, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed x-vector line");
    const int spk = detail::parse_speaker(line.substr(0, tab), "xvectors.tsv");
    std::istringstream vs(line.substr(tab + 1));
    std::vector<double> v;
    std::string tok;
    while (vs >> tok) v.push_back(std::strtod(tok.c_str(), nullptr));
    if (v.size() != corpus.xvector_dim) throw DataError("x-vector for speaker " + std::to_string(spk) + " has wrong length");
    corpus.xvectors.emplace(spk, Tensor::vector(std::move(v)));
  }
  return corpus;
}

/// True when every manifest path exists and every file under utt/ is referenced exactly once.
inline bool manifest_complete(const std::filesystem::path& dir, std::string* problem = nullptr) {
  namespace fs = std::filesystem;
  std::map<std::string, int> refs;
  for (const auto& e : read_manifest(dir)) {
    if (!fs::exists(dir / e.relative_path)) {
      if (problem) *problem = "missing file " + e.relative_path;
      return false;
    }
    ++refs[e.relative_path];
  }
  for (const auto& entry : fs::directory_iterator(dir / "utt")) {
    const std::string rel = "utt/" + entry.path().filename().string();
    if (refs[rel] != 1) {
      if (problem) *problem = rel + " referenced " + std::to_string(refs[rel]) + " times";
      return false;
    }
  }
  return true;
}

}  // namespace tdass
