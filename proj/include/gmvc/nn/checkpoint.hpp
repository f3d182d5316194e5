#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/io.hpp"
#include "gmvc/nn/adam.hpp"
#include "gmvc/nn/param_store.hpp"

namespace gmvc::nn {

// Checkpoint archive:
//   "GMVC" u32 version u32 record_count
//   per record: u32 name_len, name bytes, u32 rank, u64 dims[rank], f32 payload
// Parameters and buffers are stored under their own names, Adam moments under
// "adam.m.<name>" / "adam.v.<name>", and the optimizer step as "adam.step".
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_record(std::ostream& os, const std::string& name, const std::vector<std::size_t>& shape,
                       const auto& values) {
  io::put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::put_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) io::put_u64(os, d);
  for (auto v : values) io::put_f32(os, static_cast<float>(v));
}
}  // namespace detail

template <typename T>
std::string encode_checkpoint(const ParamStore<T>& store, const AdamState<T>& adam) {
  if (adam.step >= (1u << 24)) throw InvalidInput("checkpoint: step counter exceeds float32 exact range");
  std::ostringstream os(std::ios::binary);
  os.write("GMVC", 4);
  io::put_u32(os, kCheckpointVersion);
  std::uint32_t count = static_cast<std::uint32_t>(store.entries().size() + adam.m.size() + adam.v.size() + 1);
  io::put_u32(os, count);
  for (const auto& [name, e] : store.entries()) detail::put_record(os, name, e.shape, e.value);
  for (const auto& [name, m] : adam.m) detail::put_record(os, "adam.m." + name, store.at(name).shape, m);
  for (const auto& [name, v] : adam.v) detail::put_record(os, "adam.v." + name, store.at(name).shape, v);
  detail::put_record(os, "adam.step", {1}, std::vector<float>{static_cast<float>(adam.step)});
  return os.str();
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store, const AdamState<T>& adam) {
  io::write_atomic(path, encode_checkpoint(store, adam));
}

// Loads into a store whose entries are already declared; every stored
// parameter must exist with the same shape, and every declared entry must be
// present in the archive.
template <typename T>
AdamState<T> load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store) {
  std::istringstream is(io::read_file(path), std::ios::binary);
  io::expect_magic(is, "GMVC", "checkpoint");
  const auto version = io::get_u32(is);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = io::get_u32(is);
  AdamState<T> adam;
  std::size_t params_seen = 0;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = io::get_u32(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint: truncated name");
    const auto rank = io::get_u32(is);
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(io::get_u64(is));
      n *= d;
    }
    std::vector<T> values(n);
    for (auto& v : values) v = static_cast<T>(io::get_f32(is));

    if (name == "adam.step") {
      adam.step = static_cast<std::uint64_t>(values.at(0));
    } else if (name.rfind("adam.m.", 0) == 0) {
      adam.m[name.substr(7)] = std::move(values);
    } else if (name.rfind("adam.v.", 0) == 0) {
      adam.v[name.substr(7)] = std::move(values);
    } else {
      auto& e = store.at(name);
      if (e.shape != shape) throw ShapeError("checkpoint: shape mismatch for '" + name + "'");
      e.value = std::move(values);
      ++params_seen;
    }
  }
  if (params_seen != store.entries().size()) throw FormatError("checkpoint: missing parameter records");
  store.zero_grad();
  return adam;
}

}  // namespace gmvc::nn
