#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/features/manifest.hpp"
#include "gmvc/features/mel.hpp"
#include "gmvc/features/mel_cache.hpp"

namespace gmvc::features {

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t singers = 4;
  std::size_t techniques = 3;
  std::size_t vowels = 2;
  std::size_t per_class = 2;  // recordings per (singer, technique, vowel) combination
};

struct SyntheticCorpus {
  Manifest manifest;
  std::vector<MelSpectrogram> mels;  // parallel to manifest.entries
};

inline constexpr std::size_t kSyntheticMinFrames = 4 * kChunkFrames;

namespace detail {

inline double bump(double band, double centre, double width) {
  const double d = (band - centre) / width;
  return std::exp(-0.5 * d * d);
}

inline std::string synthetic_id(std::size_t s, std::size_t t, std::size_t v, std::size_t r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "s%02zu_t%zu_v%zu_r%zu", s, t, v, r);
  return buf;
}

}  // namespace detail

// Mel-like recordings with controllable attributes:
//  - singer shifts a broad formant band,
//  - vowel places two narrow band peaks,
//  - technique selects a pattern (constant, band-energy modulation, pulsed
//    energy, band tilt, low-band noise bursts, amplitude tremor) plus a
//    per-technique spectral tilt that survives chunk-level decoding,
//  - style selects a stepwise (scale) or jumping (arpeggio) pitch ridge.
// Every recording has at least kSyntheticMinFrames frames. The last replica
// of each combination goes to the test split when per_class >= 2.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.singers < 1 || spec.techniques < 1 || spec.vowels < 1 || spec.per_class < 1)
    throw InvalidInput("synthetic corpus: all counts must be >= 1");
  if (spec.singers > 20 || spec.techniques > 6 || spec.vowels > 5)
    throw InvalidInput("synthetic corpus: at most 20 singers, 6 techniques, 5 vowels");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double bands = static_cast<double>(kMelBands);
  constexpr double kTilt[6] = {0.0, 0.5, -0.5, 0.0, -0.25, 0.25};

  SyntheticCorpus corpus;
  for (std::size_t s = 0; s < spec.singers; ++s)
    for (std::size_t t = 0; t < spec.techniques; ++t)
      for (std::size_t v = 0; v < spec.vowels; ++v)
        for (std::size_t r = 0; r < spec.per_class; ++r) {
          const std::size_t frames = kSyntheticMinFrames + static_cast<std::size_t>(unit(rng) * 86.0);
          const Style style = (r % 2 == 0) ? Style::kScale : Style::kArpeggios;
          const double singer_centre =
              spec.singers == 1 ? 40.0 : 12.0 + 66.0 * static_cast<double>(s) / static_cast<double>(spec.singers - 1);
          const double vowel_a = 22.0 + 9.0 * static_cast<double>(v);
          const double vowel_b = 58.0 + 7.0 * static_cast<double>(v);
          const double phase = 2.0 * std::numbers::pi * unit(rng);
          const double level = 0.05 * noise(rng);

          MelSpectrogram m;
          m.frames = nn::Mat<float>(frames, kMelBands);
          std::vector<bool> burst(frames);
          for (std::size_t f = 0; f < frames; ++f) burst[f] = unit(rng) < 0.3;
          for (std::size_t f = 0; f < frames; ++f) {
            const double tf = static_cast<double>(f);
            const std::size_t note = f / 24;
            const double pitch = style == Style::kScale ? 4.0 + 2.0 * static_cast<double>(note % 8)
                                                        : 4.0 + 5.0 * static_cast<double>((note * 3) % 4);
            for (std::size_t b = 0; b < kMelBands; ++b) {
              const double band = static_cast<double>(b);
              double x = -0.55 + level + 0.1 * (1.0 - band / bands);
              x += 0.65 * detail::bump(band, singer_centre, 5.0);
              x += 0.35 * detail::bump(band, vowel_a, 1.8) + 0.35 * detail::bump(band, vowel_b, 1.8);
              x += 0.25 * detail::bump(band, pitch, 1.2);
              x += kTilt[t] * (band / bands - 0.5);
              switch (t) {
                case 1:  // band-energy modulation in the mid bands
                  if (b >= 30 && b < 72) x += 0.3 * std::sin(2.0 * std::numbers::pi * tf / 6.0 + phase);
                  break;
                case 2:  // pulsed energy
                  if ((f / 4) % 2 == 1) x -= 0.35;
                  break;
                case 3:  // band tilt
                  x += 0.45 * (band / bands) - 0.2;
                  break;
                case 4:  // low-band noise bursts
                  if (b < 20 && burst[f]) x += 0.45;
                  break;
                case 5:  // amplitude tremor
                  x += 0.25 * std::sin(2.0 * std::numbers::pi * tf / 14.0 + phase);
                  break;
                default:
                  break;
              }
              x += 0.04 * noise(rng);
              m.frames(f, b) = static_cast<float>(std::clamp(x, -1.0, 1.0));
            }
          }

          ManifestEntry e;
          e.meta = {detail::synthetic_id(s, t, v, r), s, t, v, style};
          e.path = "mels/" + e.meta.id + ".mel";
          e.split = (spec.per_class >= 2 && r == spec.per_class - 1) ? Split::kTest : Split::kTrain;
          corpus.manifest.entries.push_back(std::move(e));
          corpus.mels.push_back(std::move(m));
        }
  return corpus;
}

// Writes manifest.csv and mels/<id>.mel under `dir`.
inline Manifest write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  auto corpus = generate_synthetic_corpus(spec);
  corpus.manifest.base_dir = dir;
  for (std::size_t i = 0; i < corpus.mels.size(); ++i)
    write_mel(corpus.manifest.resolve(corpus.manifest.entries[i]), corpus.mels[i]);
  write_manifest(dir / "manifest.csv", corpus.manifest);
  return corpus.manifest;
}

}  // namespace gmvc::features
