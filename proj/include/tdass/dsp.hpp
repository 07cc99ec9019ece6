#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdass/bytes.hpp"
#include "tdass/errors.hpp"
#include "tdass/tensor.hpp"
#include "tdass/utterance.hpp"

namespace tdass {

inline constexpr double kDefaultSampleRate = 22050.0;
inline constexpr std::size_t kMfccCoefficients = 13;

/// Log-domain mel frames (T x n_mels) with the analysis settings that produced them.
struct MelSpectrogram {
  Tensor frames;
  double sample_rate = kDefaultSampleRate;
  std::size_t hop = 256;
  std::size_t n_fft = 1024;
};

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

inline std::size_t stft_frame_count(std::size_t length, std::size_t n_fft, std::size_t hop) {
  return 1 + (length - n_fft) / hop;
}

/// Hann-windowed magnitude spectrogram, (1 + (len - n_fft) / hop) x (n_fft / 2 + 1).
inline Tensor stft_magnitude(std::span<const double> signal, std::size_t n_fft, std::size_t hop) {
  if (n_fft < 2 || hop == 0) throw InputError("stft: n_fft must be >= 2 and hop > 0");
  if (signal.size() < n_fft) {
    throw InputError("stft: signal of " + std::to_string(signal.size()) + " samples shorter than n_fft " +
                     std::to_string(n_fft));
  }
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t frames = stft_frame_count(signal.size(), n_fft, hop);
  const auto window = hann_window(n_fft);
  std::vector<double> cos_table(n_fft), sin_table(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft);
    cos_table[i] = std::cos(a);
    sin_table[i] = std::sin(a);
  }
  Tensor out({frames, bins});
  std::vector<double> buf(n_fft);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n_fft; ++i) buf[i] = signal[f * hop + i] * window[i];
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < n_fft; ++i) {
        const std::size_t idx = (k * i) % n_fft;
        re += buf[i] * cos_table[idx];
        im -= buf[i] * sin_table[idx];
      }
      out.at(f, k) = std::hypot(re, im);
    }
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters evenly spaced on the HTK mel scale, (n_mels x n_fft/2+1).
inline Tensor mel_filterbank(std::size_t n_fft, std::size_t n_mels, double sample_rate, double f_min = 0.0,
                             double f_max = -1.0) {
  if (f_max < 0.0) f_max = sample_rate / 2.0;
  if (n_mels == 0 || n_fft < 2) throw ConfigError("mel_filterbank: n_mels and n_fft must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw ConfigError("mel_filterbank: need 0 <= f_min < f_max <= sample_rate/2");
  }
  const std::size_t bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  Tensor fb({n_mels, bins});
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], peak = edges[m + 1], hi = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f <= peak) {
        w = (f - lo) / (peak - lo);
      } else if (f > peak && f < hi) {
        w = (hi - f) / (hi - peak);
      }
      fb.at(m, k) = w;
      row_sum += w;
    }
    if (row_sum <= 0.0) {
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) + " covers no FFT bin; n_mels " +
                        std::to_string(n_mels) + " too large for n_fft " + std::to_string(n_fft));
    }
  }
  return fb;
}

inline MelSpectrogram log_mel_spectrogram(std::span<const double> signal, double sample_rate, std::size_t n_fft,
                                          std::size_t hop, std::size_t n_mels) {
  const Tensor mag = stft_magnitude(signal, n_fft, hop);
  const Tensor fb = mel_filterbank(n_fft, n_mels, sample_rate);
  const std::size_t frames = mag.dim(0), bins = mag.dim(1);
  Tensor mel({frames, n_mels});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb.at(m, k) * mag.at(t, k) * mag.at(t, k);
      mel.at(t, m) = std::log(std::max(e, 1e-10));
    }
  }
  return {std::move(mel), sample_rate, hop, n_fft};
}

/// Orthonormal DCT-II basis, row k = coefficient k.
inline Tensor dct_matrix(std::size_t n) {
  Tensor m({n, n});
  const double N = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N);
    for (std::size_t i = 0; i < n; ++i) {
      m.at(k, i) = s * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) / N);
    }
  }
  return m;
}

/// DCT-II of every frame, all coefficients kept.
inline Tensor dct_frames(const Tensor& frames) {
  const std::size_t T = frames.dim(0), n = frames.dim(1);
  const Tensor m = dct_matrix(n);
  Tensor out({T, n});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < n; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += m.at(k, i) * frames.at(t, i);
      out.at(t, k) = acc;
    }
  }
  return out;
}

inline Tensor inverse_dct_frames(const Tensor& coeffs) {
  const std::size_t T = coeffs.dim(0), n = coeffs.dim(1);
  const Tensor m = dct_matrix(n);
  Tensor out({T, n});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += m.at(k, i) * coeffs.at(t, k);
      out.at(t, i) = acc;
    }
  }
  return out;
}

/// Cepstral coefficients 1..13 of log-mel frames (c0 dropped).
inline Tensor mfcc(const Tensor& log_mel, std::size_t n_coeffs = kMfccCoefficients) {
  if (log_mel.rank() != 2) throw DimensionError("mfcc: expected (T x n_mels), got " + shape_str(log_mel.shape()));
  if (log_mel.dim(1) < n_coeffs + 1) {
    throw ContractError("mfcc: " + std::to_string(log_mel.dim(1)) + " mel bins cannot give " + std::to_string(n_coeffs) +
                        " coefficients past c0");
  }
  if (!log_mel.all_finite()) throw NumericError("mfcc: non-finite log-mel input");
  const Tensor all = dct_frames(log_mel);
  Tensor out({log_mel.dim(0), n_coeffs});
  for (std::size_t t = 0; t < log_mel.dim(0); ++t) {
    for (std::size_t k = 0; k < n_coeffs; ++k) out.at(t, k) = all.at(t, k + 1);
  }
  return out;
}

inline Tensor mfcc(const MelSpectrogram& mel) { return mfcc(mel.frames); }

inline double frame_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.dim(1); ++d) {
    const double diff = a.at(i, d) - b.at(j, d);
    s += diff * diff;
  }
  return std::sqrt(s);
}

struct DtwResult {
  std::vector<std::pair<std::size_t, std::size_t>> path;
  double cost = 0.0;
};

/// Monotone alignment with steps (1,0), (0,1), (1,1) minimizing summed Euclidean frame distance.
inline DtwResult dtw_align(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ContractError("dtw: sequences " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ in width");
  }
  const std::size_t n = a.dim(0), m = b.dim(0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(n * m, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = frame_distance(a, i, b, j);
      if (i == 0 && j == 0) {
        at(i, j) = d;
        continue;
      }
      double best = inf;
      if (i > 0 && j > 0) best = at(i - 1, j - 1);
      if (i > 0) best = std::min(best, at(i - 1, j));
      if (j > 0) best = std::min(best, at(i, j - 1));
      at(i, j) = best + d;
    }
  }
  DtwResult res;
  res.cost = at(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  res.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i - 1, j - 1) <= at(i - 1, j) && at(i - 1, j - 1) <= at(i, j - 1)) {
      --i;
      --j;
    } else if (i > 0 && (j == 0 || at(i - 1, j) <= at(i, j - 1))) {
      --i;
    } else {
      --j;
    }
    res.path.emplace_back(i, j);
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

/// Scale turning a cepstral Euclidean distance into dB: (10 / ln 10) * sqrt(2 * sum d^2).
inline double mcd_frame_db(double squared_distance) {
  return (10.0 / std::numbers::ln10) * std::sqrt(2.0 * squared_distance);
}

/// Mel cepstral distortion in dB, averaged over the DTW path.
inline double mcd(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ContractError("mcd: coefficient dimension mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const DtwResult align = dtw_align(a, b);
  double total = 0.0;
  for (const auto& [i, j] : align.path) {
    const double d = frame_distance(a, i, b, j);
    total += mcd_frame_db(d * d);
  }
  return total / static_cast<double>(align.path.size());
}

/// Fixed-length unit-norm speaker vector standing in for a pretrained x-vector extractor.
struct SpeakerEmbedding {
  Tensor vector;
  int speaker_id = 0;
};

/// Mean and standard deviation of all the speaker's mel frames, projected by a seeded Gaussian
/// matrix to `dim` values, then L2-normalized.
inline SpeakerEmbedding pseudo_xvector(std::span<const Utterance* const> utterances, std::size_t dim,
                                       std::uint64_t seed) {
  if (utterances.empty()) throw InputError("pseudo_xvector: no utterances");
  const std::size_t n_mels = utterances.front()->n_mels();
  std::vector<double> mean(n_mels, 0.0), sq(n_mels, 0.0);
  double count = 0.0;
  for (const Utterance* u : utterances) {
    if (u->n_mels() != n_mels) throw DataError("pseudo_xvector: utterances disagree on n_mels");
    for (std::size_t t = 0; t < u->n_frames(); ++t) {
      for (std::size_t m = 0; m < n_mels; ++m) {
        const double v = u->mel.at(t, m);
        mean[m] += v;
        sq[m] += v * v;
      }
      count += 1.0;
    }
  }
  std::vector<double> stats(2 * n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    mean[m] /= count;
    stats[m] = mean[m];
    stats[n_mels + m] = std::sqrt(std::max(0.0, sq[m] / count - mean[m] * mean[m]));
  }
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(stats.size())));
  Tensor out({dim});
  for (std::size_t r = 0; r < dim; ++r) {
    double acc = 0.0;
    for (double s : stats) acc += gauss(rng) * s;
    out[r] = acc;
  }
  double norm = 0.0;
  for (double v : out.data()) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("pseudo_xvector: degenerate projection");
  for (auto& v : out.data()) v /= norm;
  return {std::move(out), utterances.front()->speaker};
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

struct WavData {
  double sample_rate = kDefaultSampleRate;
  std::vector<double> samples;  // in [-1, 1)
};

/// PCM 16-bit little-endian mono.
inline std::string encode_wav(const WavData& wav) {
  ByteWriter data;
  for (double s : wav.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    data.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
  const auto rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  ByteWriter w;
  w.bytes("RIFF");
  w.u32(static_cast<std::uint32_t>(36 + data.buffer().size()));
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(rate);
  w.u32(rate * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data");
  w.u32(static_cast<std::uint32_t>(data.buffer().size()));
  w.bytes(data.buffer());
  return w.buffer();
}

inline WavData parse_wav(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != "RIFF") throw FormatError("not a RIFF file", 0);
  r.u32();
  if (r.bytes(4) != "WAVE") throw FormatError("RIFF type is not WAVE", 8);
  WavData wav;
  bool have_fmt = false;
  while (!r.done()) {
    const std::size_t chunk_offset = r.offset();
    const std::string id(r.bytes(4));
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      ByteReader fmt(r.bytes(size));
      const auto format = fmt.u16(), channels = fmt.u16();
      const auto rate = fmt.u32();
      fmt.u32();
      fmt.u16();
      const auto bits = fmt.u16();
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError("only 16-bit PCM mono wav is supported", chunk_offset);
      }
      wav.sample_rate = rate;
      if (rate != static_cast<std::uint32_t>(kDefaultSampleRate)) {
        warn("wav sample rate " + std::to_string(rate) + " Hz differs from 22050 Hz; no resampling applied");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk", chunk_offset);
      ByteReader data(r.bytes(size));
      wav.samples.reserve(size / 2);
      for (std::uint32_t i = 0; i < size / 2; ++i) {
        wav.samples.push_back(static_cast<double>(static_cast<std::int16_t>(data.u16())) / 32768.0);
      }
      return wav;
    } else {
      r.bytes(size + (size & 1u));
    }
  }
  throw FormatError("wav file has no data chunk", r.offset());
}

inline WavData read_wav(const std::filesystem::path& path) { return parse_wav(read_file_bytes(path)); }
inline void write_wav(const WavData& wav, const std::filesystem::path& path) { write_file_bytes(path, encode_wav(wav)); }

}  // namespace tdass
