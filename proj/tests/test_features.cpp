#include <cmath>
#include <complex>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "gmvc/features/audio.hpp"
#include "gmvc/features/chunk.hpp"
#include "gmvc/features/manifest.hpp"
#include "gmvc/features/mel.hpp"
#include "gmvc/features/mel_cache.hpp"
#include "gmvc/features/synthetic.hpp"
#include "test_util.hpp"

using namespace gmvc;
using namespace gmvc::features;
namespace fs = std::filesystem;

namespace {

Waveform sine(double hz, double seconds, int rate = kSampleRate, double amp = 1.0) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(std::lround(seconds * rate)));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  return w;
}

MelSpectrogram random_mel(std::size_t frames, std::uint64_t seed) {
  MelSpectrogram m;
  m.frames = gmvc::testing::random_mat<float>(frames, kMelBands, seed, 0.4);
  for (auto& v : m.frames.data) v = std::clamp(v, -1.0f, 1.0f);
  return m;
}

// Brute-force DFT magnitude of one Hann-windowed frame.
std::vector<double> dft_magnitude(const std::vector<float>& x, std::size_t start, std::size_t n) {
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));
      acc += w * x[start + i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
    }
    mag[k] = std::abs(acc);
  }
  return mag;
}

// Triangular HTK filters written out independently of the library.
double filter_weight(std::size_t band, double hz) {
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  const double top = mel(11025.0);
  const double l = inv(top * band / 97.0), c = inv(top * (band + 1) / 97.0), r = inv(top * (band + 2) / 97.0);
  if (hz <= l || hz >= r) return 0.0;
  return hz <= c ? (hz - l) / (c - l) : (r - hz) / (r - c);
}

}  // namespace

TEST(Mel, SilenceMapsToFloor) {
  Waveform w;
  w.samples.assign(kSampleRate, 0.0f);
  const auto m = compute_mel(w);
  ASSERT_EQ(m.frames.cols, kMelBands);
  for (float v : m.frames.data) ASSERT_EQ(v, -1.0f);
}

TEST(Mel, RejectsEmptyShortAndWrongRate) {
  EXPECT_THROW(compute_mel(Waveform{}), InvalidInput);
  EXPECT_THROW(compute_mel(sine(440, 1.0, 16000)), InvalidInput);
  Waveform shortw;
  shortw.samples.assign(1000, 0.1f);
  EXPECT_THROW(compute_mel(shortw), TooShort);
}

TEST(Mel, SineFrameCountAndPeakBandMatchBruteForce) {
  const auto w = sine(1000.0, 1.0);
  const auto m = compute_mel(w);
  EXPECT_EQ(m.frames.rows, 1u + (22050u - 1024u) / 256u);
  EXPECT_EQ(m.frames.rows, 83u);
  const std::size_t f = 20;
  const auto mag = dft_magnitude(w.samples, f * 256, 1024);
  std::vector<double> bands(kMelBands, 0.0);
  for (std::size_t b = 0; b < kMelBands; ++b)
    for (std::size_t k = 0; k < mag.size(); ++k) bands[b] += filter_weight(b, k * 22050.0 / 1024.0) * mag[k];
  const auto oracle = std::max_element(bands.begin(), bands.end()) - bands.begin();
  const float* row = m.frames.row(f);
  const auto got = std::max_element(row, row + kMelBands) - row;
  EXPECT_EQ(got, oracle);

  const auto lib = mel_magnitudes(w, MelConfig{});
  for (std::size_t b = 0; b < kMelBands; ++b) EXPECT_NEAR(lib(f, b), bands[b], 1e-6 * (1.0 + bands[b]));
}

TEST(Mel, ValuesStayInRange) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d(0.0f, 3.0f);
  Waveform w;
  w.samples.resize(20000);
  for (auto& s : w.samples) s = d(rng);
  const auto m = compute_mel(w);
  for (float v : m.frames.data) {
    ASSERT_GE(v, -1.0f);
    ASSERT_LE(v, 1.0f);
  }
  EXPECT_EQ(*std::max_element(m.frames.data.begin(), m.frames.data.end()), 1.0f);
}

TEST(Mel, ChunkSpansHalfASecond) {
  EXPECT_NEAR(static_cast<double>(kChunkFrames * kHop) / kSampleRate, 0.5, 0.001);
  EXPECT_EQ(stft_frame_count(11025, MelConfig{}), 40u);
  EXPECT_EQ(stft_frame_count(1024 + 42 * 256, MelConfig{}), 43u);
}

TEST(Mel, FilterbankMatchesIndependentFilters) {
  const auto fb = mel_filterbank(MelConfig{});
  for (std::size_t b = 0; b < kMelBands; b += 7)
    for (std::size_t k = 0; k < fb.cols; ++k) ASSERT_NEAR(fb(b, k), filter_weight(b, k * 22050.0 / 1024.0), 1e-9);
}

TEST(Audio, NormalizePeak) {
  auto w = normalize_peak(sine(300, 0.1, kSampleRate, 0.25));
  float peak = 0.0f;
  for (float s : w.samples) peak = std::max(peak, std::abs(s));
  EXPECT_EQ(peak, 1.0f);
  Waveform z;
  z.samples.assign(10, 0.0f);
  EXPECT_EQ(normalize_peak(z).samples, z.samples);
}

TEST(Audio, ResampleKeepsFrequency) {
  const auto w = resample(sine(1000.0, 1.0, 44100), kSampleRate);
  EXPECT_EQ(w.sample_rate, kSampleRate);
  EXPECT_EQ(w.samples.size(), 22050u);
  const auto ref = sine(1000.0, 1.0);
  double err = 0.0;
  for (std::size_t i = 2000; i < 20000; ++i) err = std::max(err, std::abs(double(w.samples[i]) - ref.samples[i]));
  EXPECT_LT(err, 1e-3);
}

TEST(Audio, ReadsPcmWavToMono) {
  const auto dir = gmvc::testing::temp_dir("wav");
  std::vector<float> st;
  for (int i = 0; i < 100; ++i) {
    st.push_back(0.5f);
    st.push_back(-0.25f);
  }
  gmvc::testing::write_wav16(dir / "a.wav", st, 16000, 2);
  const auto w = read_wav(dir / "a.wav");
  EXPECT_EQ(w.sample_rate, 16000);
  ASSERT_EQ(w.samples.size(), 100u);
  EXPECT_NEAR(w.samples[0], 0.125, 1e-4);
  std::ofstream(dir / "b.wav") << "not audio";
  EXPECT_THROW(read_wav(dir / "b.wav"), FormatError);
}

TEST(Chunk, FloorOfFramesOver43) {
  EXPECT_EQ(chunk(random_mel(86, 1)).size(), 2u);
  EXPECT_EQ(chunk(random_mel(301, 2)).size(), 7u);
  EXPECT_EQ(chunk(random_mel(43, 3)).size(), 1u);
  EXPECT_THROW(chunk(random_mel(42, 4)), TooShort);
  for (std::size_t frames : {43u, 100u, 172u, 250u}) EXPECT_EQ(chunk(random_mel(frames, frames)).size(), frames / 43);
}

TEST(Chunk, ConcatenateRestoresPrefix) {
  const auto m = random_mel(200, 9);
  const auto c = chunk(m);
  ASSERT_EQ(c[1].rows, kChunkFrames);
  const auto back = concatenate(c);
  ASSERT_EQ(back.frames.rows, 172u);
  for (std::size_t i = 0; i < back.frames.size(); ++i) ASSERT_EQ(back.frames.data[i], m.frames.data[i]);
}

TEST(MelCache, RoundTripIsBitExact) {
  const auto dir = gmvc::testing::temp_dir("melcache");
  auto m = random_mel(77, 3);
  m.frames.data[5] = -0.0f;
  m.frames.data[6] = std::nextafter(1.0f, 0.0f);
  write_mel(dir / "x.mel", m);
  const auto back = read_mel(dir / "x.mel");
  ASSERT_EQ(back.frames.rows, 77u);
  ASSERT_EQ(back.frames.cols, kMelBands);
  EXPECT_EQ(std::memcmp(back.frames.data.data(), m.frames.data.data(), m.frames.size() * 4), 0);
  const auto bytes = encode_mel(m);
  EXPECT_EQ(bytes.substr(0, 4), "MEL1");
  EXPECT_EQ(bytes.size(), 12 + 77 * 96 * 4u);
  EXPECT_THROW(decode_mel("MEL2" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_mel(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(Manifest, RoundTripAndValidation) {
  const auto dir = gmvc::testing::temp_dir("manifest");
  Manifest m;
  m.base_dir = dir;
  m.entries.push_back({"a.wav", {"a", 3, 1, 2, Style::kArpeggios}, Split::kTrain});
  m.entries.push_back({"sub/b.wav", {"b", 19, 5, 4, Style::kScale}, Split::kTest});
  write_manifest(dir / "m.csv", m);
  const auto back = read_manifest(dir / "m.csv", false);
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_THROW(read_manifest(dir / "m.csv", true), InvalidManifest);

  m.entries.push_back(m.entries[0]);
  EXPECT_THROW(validate(m), InvalidManifest);
  m.entries.pop_back();
  m.entries[0].meta.singer = 20;
  EXPECT_THROW(validate(m), InvalidManifest);
  EXPECT_THROW(parse_manifest("id,path\n", dir), InvalidManifest);
  EXPECT_THROW(parse_manifest(std::string(kManifestHeader) + "\nx,p,1,1,1,scale,valid\n", dir), InvalidManifest);
}

TEST(Synthetic, CountsAndChunkability) {
  const auto c = generate_synthetic_corpus({7, 4, 3, 2, 2});
  EXPECT_EQ(c.manifest.entries.size(), 48u);
  std::size_t test = 0;
  for (std::size_t i = 0; i < c.mels.size(); ++i) {
    EXPECT_GE(chunk(c.mels[i]).size(), 4u);
    for (float v : c.mels[i].frames.data) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
    test += c.manifest.entries[i].split == Split::kTest;
  }
  EXPECT_EQ(test, 24u);
}

TEST(Synthetic, SameSeedSameBytes) {
  const auto a = gmvc::testing::temp_dir("synth_a");
  const auto b = gmvc::testing::temp_dir("synth_b");
  write_synthetic_corpus(a, {7, 2, 2, 2, 2});
  write_synthetic_corpus(b, {7, 2, 2, 2, 2});
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(io::read_file(e.path()), io::read_file(b / rel)) << rel;
  }
  EXPECT_NE(encode_mel(generate_synthetic_corpus({8, 2, 2, 2, 2}).mels[0]),
            encode_mel(generate_synthetic_corpus({7, 2, 2, 2, 2}).mels[0]));
}

TEST(Synthetic, SingersSeparableByNearestCentroid) {
  const auto c = generate_synthetic_corpus({7, 4, 3, 2, 4});
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> centroid(4, std::vector<double>(kMelBands, 0.0));
  std::vector<double> count(4, 0.0);
  for (std::size_t i = 0; i < c.mels.size(); ++i) {
    std::vector<double> mean(kMelBands, 0.0);
    const auto& f = c.mels[i].frames;
    for (std::size_t t = 0; t < f.rows; ++t)
      for (std::size_t b = 0; b < kMelBands; ++b) mean[b] += f(t, b) / static_cast<double>(f.rows);
    const auto s = c.manifest.entries[i].meta.singer;
    for (std::size_t b = 0; b < kMelBands; ++b) centroid[s][b] += mean[b];
    count[s] += 1.0;
    means.push_back(mean);
  }
  for (std::size_t s = 0; s < 4; ++s)
    for (auto& v : centroid[s]) v /= count[s];
  for (std::size_t i = 0; i < means.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t s = 0; s < 4; ++s) {
      double d = 0.0;
      for (std::size_t b = 0; b < kMelBands; ++b) d += (means[i][b] - centroid[s][b]) * (means[i][b] - centroid[s][b]);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    EXPECT_EQ(best, c.manifest.entries[i].meta.singer) << c.manifest.entries[i].meta.id;
  }
}
