#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "test_support.hpp"
#include "tdass/dsp.hpp"

using namespace tdass;

namespace {

Tensor random_frames(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t({n, d});
  for (auto& v : t.data()) v = g(rng);
  return t;
}

// Exhaustive search over monotone paths.
double brute_dtw(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), m = b.dim(0);
  std::function<double(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> double {
    const double d = frame_distance(a, i, b, j);
    if (i == n - 1 && j == m - 1) return d;
    double best = std::numeric_limits<double>::infinity();
    if (i + 1 < n) best = std::min(best, go(i + 1, j));
    if (j + 1 < m) best = std::min(best, go(i, j + 1));
    if (i + 1 < n && j + 1 < m) best = std::min(best, go(i + 1, j + 1));
    return d + best;
  };
  return go(0, 0);
}

}  // namespace

TEST(Stft, FrameCountFormula) {
  EXPECT_EQ(stft_frame_count(1024, 1024, 256), 1u);
  EXPECT_EQ(stft_frame_count(2047, 1024, 256), 4u);
  const std::vector<double> x(1300, 0.1);
  EXPECT_EQ(stft_magnitude(x, 256, 64).dim(0), 1 + (1300 - 256) / 64);
  EXPECT_EQ(stft_magnitude(x, 256, 64).dim(1), 129u);
}

TEST(Stft, ConstantSignalLandsInDcBin) {
  const std::vector<double> x(64, 1.0);
  const Tensor s = stft_magnitude(x, 64, 64);
  // Periodic Hann sums to n/2.
  EXPECT_NEAR(s.at(0, 0), 32.0, 1e-9);
  EXPECT_NEAR(s.at(0, 1), 16.0, 1e-9);
  for (std::size_t k = 2; k < s.dim(1); ++k) EXPECT_NEAR(s.at(0, k), 0.0, 1e-9);
}

TEST(Stft, BinCenteredSinusoidPeaks) {
  const std::size_t n = 128, bin = 10;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::cos(2.0 * std::numbers::pi * bin * i / n);
  const Tensor s = stft_magnitude(x, n, n);
  EXPECT_NEAR(s.at(0, bin), n / 4.0, 1e-8);
  EXPECT_NEAR(s.at(0, bin - 1), n / 8.0, 1e-8);
  EXPECT_NEAR(s.at(0, bin + 1), n / 8.0, 1e-8);
  EXPECT_NEAR(s.at(0, 30), 0.0, 1e-8);
}

TEST(Stft, ZeroSignalAndShortSignal) {
  const std::vector<double> x(100, 0.0);
  const Tensor s = stft_magnitude(x, 32, 16);
  for (double v : s.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(stft_magnitude(std::vector<double>(10, 0.0), 32, 16), InputError);
}

TEST(MelFilterbank, ShapeAndCoverage) {
  const Tensor fb = mel_filterbank(512, 20, 22050.0);
  ASSERT_EQ(fb.shape(), (Shape{20, 257}));
  std::size_t prev_peak = 0;
  for (std::size_t m = 0; m < 20; ++m) {
    double sum = 0.0;
    std::size_t peak = 0;
    for (std::size_t k = 0; k < 257; ++k) {
      EXPECT_GE(fb.at(m, k), 0.0);
      EXPECT_LE(fb.at(m, k), 1.0);
      sum += fb.at(m, k);
      if (fb.at(m, k) > fb.at(m, peak)) peak = k;
    }
    EXPECT_GT(sum, 0.0);
    if (m > 0) EXPECT_GT(peak, prev_peak);
    prev_peak = peak;
  }
}

TEST(MelFilterbank, TooManyFiltersIsConfigError) {
  EXPECT_THROW(mel_filterbank(16, 40, 22050.0), ConfigError);
  EXPECT_THROW(mel_filterbank(512, 20, 22050.0, 5000.0, 4000.0), ConfigError);
}

TEST(MelScale, HtkRoundTrip) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  for (double hz : {0.0, 100.0, 1000.0, 11025.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}

TEST(LogMel, FloorsSilence) {
  const MelSpectrogram m = log_mel_spectrogram(std::vector<double>(2048, 0.0), 22050.0, 512, 256, 20);
  for (double v : m.frames.data()) EXPECT_DOUBLE_EQ(v, std::log(1e-10));
}

TEST(Dct, MatrixIsOrthonormal) {
  const Tensor d = dct_matrix(20);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 20; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 20; ++k) dot += d.at(i, k) * d.at(j, k);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Dct, RoundTrip) {
  const Tensor x = random_frames(5, 20, 3);
  const Tensor back = inverse_dct_frames(dct_frames(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
}

TEST(Dct, ConstantFrameOnlyHasC0) {
  Tensor x({1, 16});
  for (auto& v : x.data()) v = 2.0;
  const Tensor c = dct_frames(x);
  EXPECT_NEAR(c.at(0, 0), 2.0 * std::sqrt(16.0), 1e-12);
  for (std::size_t k = 1; k < 16; ++k) EXPECT_NEAR(c.at(0, k), 0.0, 1e-12);
}

TEST(Dct, CosineBasisMapsToOneCoefficient) {
  const std::size_t n = 16, k0 = 3;
  Tensor x({1, n});
  for (std::size_t i = 0; i < n; ++i) x.at(0, i) = std::cos(std::numbers::pi * k0 * (i + 0.5) / n);
  const Tensor c = dct_frames(x);
  for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(c.at(0, k), k == k0 ? std::sqrt(n / 2.0) : 0.0, 1e-12);
}

TEST(Mfcc, DropsC0AndKeepsNextThirteen) {
  const Tensor x = random_frames(4, 20, 9);
  const Tensor c = mfcc(x);
  ASSERT_EQ(c.shape(), (Shape{4, 13}));
  const Tensor full = dct_frames(x);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t k = 0; k < 13; ++k) EXPECT_EQ(c.at(t, k), full.at(t, k + 1));
  }
}

TEST(Mfcc, TooFewBinsIsContractError) {
  EXPECT_THROW(mfcc(Tensor({2, 13})), ContractError);
}

TEST(Dtw, IdentityIsDiagonalAtZeroCost) {
  const Tensor a = random_frames(6, 4, 1);
  const DtwResult r = dtw_align(a, a);
  EXPECT_EQ(r.cost, 0.0);
  ASSERT_EQ(r.path.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.path[i], std::make_pair(i, i));
}

TEST(Dtw, SymmetricCost) {
  const Tensor a = random_frames(5, 3, 2), b = random_frames(8, 3, 4);
  EXPECT_NEAR(dtw_align(a, b).cost, dtw_align(b, a).cost, 1e-12);
}

TEST(Dtw, SingleFrameAgainstSequence) {
  const Tensor a = random_frames(1, 3, 5), b = random_frames(4, 3, 6);
  const DtwResult r = dtw_align(a, b);
  ASSERT_EQ(r.path.size(), 4u);
  double want = 0.0;
  for (std::size_t j = 0; j < 4; ++j) want += frame_distance(a, 0, b, j);
  EXPECT_NEAR(r.cost, want, 1e-12);
}

TEST(Dtw, MatchesExhaustiveSearch) {
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::size_t m = 1; m <= 6; ++m) {
      const Tensor a = random_frames(n, 2, 10 * n + m), b = random_frames(m, 2, 100 + 10 * n + m);
      const DtwResult r = dtw_align(a, b);
      EXPECT_NEAR(r.cost, brute_dtw(a, b), 1e-12) << n << "x" << m;
      double along = 0.0;
      for (const auto& [i, j] : r.path) along += frame_distance(a, i, b, j);
      EXPECT_NEAR(along, r.cost, 1e-12);
      EXPECT_EQ(r.path.front(), std::make_pair(std::size_t{0}, std::size_t{0}));
      EXPECT_EQ(r.path.back(), std::make_pair(n - 1, m - 1));
    }
  }
}

TEST(Dtw, WidthMismatchIsContractError) {
  EXPECT_THROW(dtw_align(Tensor({2, 3}), Tensor({2, 4})), ContractError);
}

TEST(Mcd, IdentityIsZeroAndSymmetric) {
  const Tensor a = random_frames(7, 13, 11), b = random_frames(9, 13, 12);
  EXPECT_EQ(mcd(a, a), 0.0);
  EXPECT_NEAR(mcd(a, b), mcd(b, a), 1e-12);
  EXPECT_GT(mcd(a, b), 0.0);
}

TEST(Mcd, UnitOffsetInOneCoefficient) {
  Tensor a({1, 13}), b({1, 13});
  b.at(0, 1) = 1.0;
  EXPECT_NEAR(mcd(a, b), 6.141851, 1e-6);
}

TEST(Mcd, DimensionMismatchIsContractError) {
  EXPECT_THROW(mcd(Tensor({2, 13}), Tensor({2, 12})), ContractError);
}

TEST(Xvector, UnitNormDeterministicAndSpeakerSpecific) {
  const Corpus c = generate_corpus(test_util::small_corpus_config());
  const auto s0 = c.select(0, Split::Train), s1 = c.select(1, Split::Train);
  const SpeakerEmbedding a = pseudo_xvector(s0, 16, 7), b = pseudo_xvector(s0, 16, 7);
  EXPECT_EQ(a.vector, b.vector);
  EXPECT_EQ(a.speaker_id, 0);
  double n = 0.0;
  for (double v : a.vector.data()) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_LT(cosine_similarity(a.vector, pseudo_xvector(s1, 16, 7).vector), 0.9);
  EXPECT_THROW(pseudo_xvector({}, 16, 7), InputError);
}

TEST(Wav, RoundTripWithinQuantization) {
  WavData w;
  for (int i = 0; i < 300; ++i) w.samples.push_back(0.9 * std::sin(0.05 * i));
  test_util::TempDir dir;
  write_wav(w, dir / "x.wav");
  const WavData back = read_wav(dir / "x.wav");
  EXPECT_EQ(back.sample_rate, 22050.0);
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32768.0);
  EXPECT_EQ(encode_wav(back), encode_wav(w));
}

TEST(Wav, RejectsMalformed) {
  EXPECT_THROW(parse_wav("RIFX0000WAVE"), FormatError);
  std::string bytes = encode_wav(WavData{22050.0, {0.1, 0.2}});
  bytes.resize(30);
  EXPECT_THROW(parse_wav(bytes), FormatError);
}
