#pragma once

#include <filesystem>
#include <sstream>

#include "gmvc/errors.hpp"
#include "gmvc/features/mel.hpp"
#include "gmvc/io.hpp"

namespace gmvc::features {

// "MEL1", u32 frames, u32 bands, then frames*bands little-endian float32, row-major.
inline std::string encode_mel(const MelSpectrogram& m) {
  std::ostringstream os(std::ios::binary);
  os.write("MEL1", 4);
  io::put_u32(os, static_cast<std::uint32_t>(m.frame_count()));
  io::put_u32(os, static_cast<std::uint32_t>(m.bands()));
  for (float v : m.frames.data) io::put_f32(os, v);
  return os.str();
}

inline MelSpectrogram decode_mel(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "MEL1", "mel cache");
  const std::uint32_t frames = io::get_u32(is);
  const std::uint32_t bands = io::get_u32(is);
  if (static_cast<std::uint64_t>(frames) * bands * 4 + 12 != bytes.size())
    throw FormatError("mel cache: payload size does not match header");
  MelSpectrogram m;
  m.frames = nn::Mat<float>(frames, bands);
  for (float& v : m.frames.data) v = io::get_f32(is);
  return m;
}

inline void write_mel(const std::filesystem::path& path, const MelSpectrogram& m) {
  io::write_atomic(path, encode_mel(m));
}

inline MelSpectrogram read_mel(const std::filesystem::path& path) { return decode_mel(io::read_file(path)); }

}  // namespace gmvc::features
