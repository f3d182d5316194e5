#pragma once

#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/features/chunk.hpp"
#include "gmvc/features/manifest.hpp"
#include "gmvc/features/mel_cache.hpp"
#include "gmvc/nn/mat.hpp"

namespace gmvc::model {

// A chunked recording together with its labels.
struct Recording {
  std::vector<features::MelChunk> chunks;
  features::RecordingMeta meta;

  std::size_t steps() const { return chunks.size(); }
};

// B recordings of equal chunk count N stacked into one (B*N*43) x 96 matrix,
// rows ordered recording, chunk, frame.
template <typename T>
struct Batch {
  nn::Mat<T> chunks;
  std::size_t recordings = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> singer;
  std::vector<std::size_t> technique;
  std::vector<std::size_t> vowel;
};

template <typename T>
Batch<T> stack(const std::vector<const Recording*>& recs) {
  if (recs.empty()) throw InvalidInput("stack: empty batch");
  Batch<T> b;
  b.recordings = recs.size();
  b.steps = recs.front()->steps();
  if (b.steps == 0) throw ShapeError("stack: recording without chunks");
  const std::size_t bands = recs.front()->chunks.front().cols;
  const std::size_t frames = recs.front()->chunks.front().rows;
  b.chunks = nn::Mat<T>(b.recordings * b.steps * frames, bands);
  std::size_t off = 0;
  for (const Recording* r : recs) {
    if (r->steps() != b.steps) throw ShapeError("stack: recordings in a batch must have equal chunk counts");
    for (const auto& c : r->chunks) {
      if (c.rows != frames || c.cols != bands) throw ShapeError("stack: chunk shape mismatch");
      for (float v : c.data) b.chunks.data[off++] = static_cast<T>(v);
    }
    b.singer.push_back(r->meta.singer);
    b.technique.push_back(r->meta.technique);
    b.vowel.push_back(r->meta.vowel);
  }
  return b;
}

template <typename T>
Batch<T> stack(const Recording& r) {
  return stack<T>(std::vector<const Recording*>{&r});
}

// Splits a (B*N*43) x 96 matrix back into per-recording chunk lists.
template <typename T>
std::vector<std::vector<features::MelChunk>> unstack(const nn::Mat<T>& m, std::size_t recordings, std::size_t steps) {
  const std::size_t frames = features::kChunkFrames;
  if (m.rows != recordings * steps * frames) throw ShapeError("unstack: row count mismatch");
  std::vector<std::vector<features::MelChunk>> out(recordings);
  std::size_t off = 0;
  for (auto& rec : out)
    for (std::size_t n = 0; n < steps; ++n) {
      features::MelChunk c(frames, m.cols);
      for (float& v : c.data) v = static_cast<float>(m.data[off++]);
      rec.push_back(std::move(c));
    }
  return out;
}

inline Recording load_recording(const features::Manifest& manifest, const features::ManifestEntry& e) {
  return Recording{features::chunk(features::read_mel(manifest.resolve(e))), e.meta};
}

inline std::vector<Recording> load_recordings(const features::Manifest& manifest) {
  std::vector<Recording> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_recording(manifest, e));
  return out;
}

}  // namespace gmvc::model
