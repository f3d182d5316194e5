#pragma once

#include <algorithm>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/features/mel.hpp"

namespace gmvc::features {

// kChunkFrames x kMelBands block; the model's unit of input.
using MelChunk = nn::Mat<float>;

// Non-overlapping 43-frame chunks; a trailing remainder shorter than one chunk is dropped.
inline std::vector<MelChunk> chunk(const MelSpectrogram& m) {
  const std::size_t n = m.frame_count() / kChunkFrames;
  if (n == 0)
    throw TooShort("chunk: " + std::to_string(m.frame_count()) + " frames, need at least " +
                   std::to_string(kChunkFrames));
  const std::size_t bands = m.bands();
  std::vector<MelChunk> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    MelChunk c(kChunkFrames, bands);
    auto first = m.frames.data.begin() + static_cast<std::ptrdiff_t>(i * kChunkFrames * bands);
    std::copy(first, first + static_cast<std::ptrdiff_t>(kChunkFrames * bands), c.data.begin());
    out.push_back(std::move(c));
  }
  return out;
}

// Inverse of chunk() up to the dropped tail.
inline MelSpectrogram concatenate(const std::vector<MelChunk>& chunks, std::size_t hop = kHop) {
  MelSpectrogram m;
  m.hop = hop;
  const std::size_t bands = chunks.empty() ? kMelBands : chunks.front().cols;
  m.frames = nn::Mat<float>(0, bands);
  for (const auto& c : chunks) {
    if (c.cols != bands) throw ShapeError("concatenate: band count mismatch");
    m.frames.data.insert(m.frames.data.end(), c.data.begin(), c.data.end());
    m.frames.rows += c.rows;
  }
  return m;
}

}  // namespace gmvc::features
