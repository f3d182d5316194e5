#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <fftw3.h>

#include "gmvc/errors.hpp"
#include "gmvc/features/audio.hpp"
#include "gmvc/nn/mat.hpp"

namespace gmvc::features {

inline constexpr std::size_t kMelBands = 96;
inline constexpr std::size_t kChunkFrames = 43;
inline constexpr std::size_t kHop = 256;

struct MelConfig {
  int sample_rate = kSampleRate;
  std::size_t n_fft = 1024;
  std::size_t win_length = 1024;
  std::size_t hop = kHop;
  std::size_t n_mels = kMelBands;
  double fmin = 0.0;
  double fmax = 11025.0;
  double top_db = 80.0;
};

// Frames x bands, every cell in [-1, 1].
struct MelSpectrogram {
  nn::Mat<float> frames;
  std::size_t hop = kHop;

  std::size_t frame_count() const { return frames.rows; }
  std::size_t bands() const { return frames.cols; }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// n_mels x (n_fft/2 + 1) triangular filters with centres equally spaced on
// the HTK mel scale between fmin and fmax; peak weight 1.
inline nn::Mat<double> mel_filterbank(const MelConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  nn::Mat<double> fb(cfg.n_mels, bins);
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      double wgt = 0.0;
      if (f > left && f <= centre) wgt = (f - left) / (centre - left);
      else if (f > centre && f < right) wgt = (right - f) / (right - centre);
      fb(m, k) = wgt;
    }
  }
  return fb;
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

// Frame count of the un-padded STFT: 1 + floor((samples - win) / hop).
inline std::size_t stft_frame_count(std::size_t samples, const MelConfig& cfg) {
  if (samples < cfg.win_length) return 0;
  return 1 + (samples - cfg.win_length) / cfg.hop;
}

// Mel-filtered STFT magnitudes (frames x n_mels), before any log scaling.
inline nn::Mat<double> mel_magnitudes(const Waveform& w, const MelConfig& cfg) {
  const std::size_t frames = stft_frame_count(w.samples.size(), cfg);
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const auto fb = mel_filterbank(cfg);
  const auto window = hann_window(cfg.win_length);
  nn::Mat<double> out(frames, cfg.n_mels);
  if (frames == 0) return out;

  std::vector<double> in(cfg.n_fft, 0.0);
  std::vector<std::complex<double>> spec(bins);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg.n_fft), in.data(),
                                        reinterpret_cast<fftw_complex*>(spec.data()), FFTW_ESTIMATE);
  std::vector<double> mag(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(in.begin(), in.end(), 0.0);
    const std::size_t start = f * cfg.hop;
    for (std::size_t i = 0; i < cfg.win_length; ++i) in[i] = window[i] * w.samples[start + i];
    fftw_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(spec[k]);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += fb(m, k) * mag[k];
      out(f, m) = acc;
    }
  }
  fftw_destroy_plan(plan);
  return out;
}

// Log-magnitude mel spectrogram. Values are in dB relative to the recording's
// maximum, clipped at -top_db and mapped linearly onto [-1, 1]. Silence maps
// to -1 everywhere.
inline MelSpectrogram compute_mel(const Waveform& w, const MelConfig& cfg = {}) {
  if (w.samples.empty()) throw InvalidInput("compute_mel: empty waveform");
  if (w.sample_rate != cfg.sample_rate)
    throw InvalidInput("compute_mel: expected " + std::to_string(cfg.sample_rate) + " Hz input, got " +
                       std::to_string(w.sample_rate));
  if (w.samples.size() < cfg.win_length) throw TooShort("compute_mel: waveform shorter than one analysis window");

  const auto mags = mel_magnitudes(w, cfg);
  double peak = 0.0;
  for (double v : mags.data) peak = std::max(peak, v);

  MelSpectrogram out;
  out.hop = cfg.hop;
  out.frames = nn::Mat<float>(mags.rows, mags.cols, -1.0f);
  if (!(peak > 0.0)) return out;

  const double max_db = 20.0 * std::log10(peak);
  const double floor_db = max_db - cfg.top_db;
  for (std::size_t i = 0; i < mags.size(); ++i) {
    const double v = mags.data[i];
    const double db = v > 0.0 ? 20.0 * std::log10(v) : floor_db;
    const double scaled = 2.0 * (std::max(db, floor_db) - floor_db) / cfg.top_db - 1.0;
    out.frames.data[i] = static_cast<float>(std::clamp(scaled, -1.0, 1.0));
  }
  return out;
}

// Full ingestion path for an arbitrary recording: resample, peak-normalize, mel.
inline MelSpectrogram prepare_recording(const Waveform& raw, const MelConfig& cfg = {}) {
  return compute_mel(normalize_peak(resample(raw, cfg.sample_rate)), cfg);
}

}  // namespace gmvc::features
