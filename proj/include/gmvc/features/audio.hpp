#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/io.hpp"

namespace gmvc::features {

inline constexpr int kSampleRate = 22050;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

// Scales so the largest magnitude is exactly 1. All-zero input is returned unchanged.
inline Waveform normalize_peak(Waveform w) {
  float peak = 0.0f;
  for (float s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.0f) {
    for (float& s : w.samples) s /= peak;
    // Guard against rounding leaving the extreme sample a ulp away from 1.
    for (float& s : w.samples) s = std::clamp(s, -1.0f, 1.0f);
    for (float& s : w.samples)
      if (std::abs(std::abs(s) - 1.0f) < 1e-7f) s = std::copysign(1.0f, s);
  }
  return w;
}

// Windowed-sinc polyphase resampler. The ratio out/in is reduced to L/M; each
// of the L phases has its own Blackman-windowed sinc filter with
// `zero_crossings` lobes on each side and a cutoff at the lower Nyquist rate.
inline Waveform resample(const Waveform& w, int target_rate, int zero_crossings = 16) {
  if (w.sample_rate <= 0 || target_rate <= 0) throw InvalidInput("resample: sample rates must be positive");
  if (w.sample_rate == target_rate) return w;
  const long g = std::gcd(w.sample_rate, target_rate);
  const long up = target_rate / g;
  const long down = w.sample_rate / g;
  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const long half = static_cast<long>(std::ceil(zero_crossings / cutoff));

  // phases[p][j] is the weight of input sample floor(t) - half + 1 + j for an
  // output whose fractional input position is p / up.
  std::vector<std::vector<double>> phases(static_cast<std::size_t>(up), std::vector<double>(2 * half));
  for (long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    for (long j = 0; j < 2 * half; ++j) {
      const double x = static_cast<double>(j - half + 1) - frac;
      const double arg = x * cutoff;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double r = x / static_cast<double>(half);
      const double win = std::abs(r) >= 1.0
                             ? 0.0
                             : 0.42 + 0.5 * std::cos(std::numbers::pi * r) + 0.08 * std::cos(2.0 * std::numbers::pi * r);
      phases[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)] = cutoff * sinc * win;
    }
  }

  const long n_in = static_cast<long>(w.samples.size());
  const long n_out = (n_in * up + down - 1) / down;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (long n = 0; n < n_out; ++n) {
    const long pos = n * down;  // position in units of 1/up input samples
    const long base = pos / up;
    const auto& h = phases[static_cast<std::size_t>(pos % up)];
    double acc = 0.0;
    for (long j = 0; j < 2 * half; ++j) {
      const long k = base - half + 1 + j;
      if (k >= 0 && k < n_in) acc += h[static_cast<std::size_t>(j)] * w.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

// Minimal RIFF/WAVE reader: PCM 8/16/24/32-bit and IEEE float32; channels are
// averaged to mono.
inline Waveform read_wav(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  auto u16 = [&](std::size_t o) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes.at(o))) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes.at(o + 1))) << 8);
  };
  auto u32 = [&](std::size_t o) { return u16(o) | (u16(o + 2) << 16); };
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");

  std::uint32_t format = 0, channels = 0, rate = 0, bits = 0;
  std::size_t data_off = 0, data_len = 0;
  for (std::size_t o = 12; o + 8 <= bytes.size();) {
    const std::string id = bytes.substr(o, 4);
    const std::size_t len = u32(o + 4);
    if (id == "fmt ") {
      format = u16(o + 8);
      channels = u16(o + 10);
      rate = u32(o + 12);
      bits = u16(o + 22);
      if (format == 0xFFFE && len >= 26) format = u16(o + 32);  // WAVE_FORMAT_EXTENSIBLE subformat
    } else if (id == "data") {
      data_off = o + 8;
      data_len = std::min(len, bytes.size() - data_off);
    }
    o += 8 + len + (len & 1u);
  }
  if (channels == 0 || data_off == 0) throw FormatError(path.string() + ": missing fmt or data chunk");
  const bool pcm = format == 1;
  const bool flt = format == 3 && bits == 32;
  if (!(pcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) && !flt)
    throw FormatError(path.string() + ": unsupported sample format");

  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t o = data_off + (f * channels + c) * width;
      double s = 0.0;
      if (flt) {
        s = std::bit_cast<float>(u32(o));
      } else if (bits == 8) {
        s = (static_cast<unsigned char>(bytes[o]) - 128.0) / 128.0;
      } else {
        std::uint32_t raw = 0;
        for (std::size_t b = 0; b < width; ++b)
          raw |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[o + b])) << (8 * b);
        const std::uint32_t sign = 1u << (bits - 1);
        const std::int64_t v = (raw & sign) ? static_cast<std::int64_t>(raw) - (std::int64_t{1} << bits)
                                            : static_cast<std::int64_t>(raw);
        s = static_cast<double>(v) / static_cast<double>(sign);
      }
      acc += s;
    }
    w.samples[f] = static_cast<float>(acc / channels);
  }
  return w;
}

}  // namespace gmvc::features
