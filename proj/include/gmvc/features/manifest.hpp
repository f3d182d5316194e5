#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gmvc/errors.hpp"
#include "gmvc/io.hpp"

namespace gmvc::features {

enum class Style { kScale, kArpeggios };
enum class Split { kTrain, kTest };

inline std::string to_string(Style s) { return s == Style::kScale ? "scale" : "arpeggios"; }
inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

// Upper bounds for the label indices.
struct ClassCounts {
  std::size_t singers = 20;
  std::size_t techniques = 6;
  std::size_t vowels = 5;
};

struct RecordingMeta {
  std::string id;
  std::size_t singer = 0;
  std::size_t technique = 0;
  std::size_t vowel = 0;
  Style style = Style::kScale;

  bool operator==(const RecordingMeta&) const = default;
};

struct ManifestEntry {
  std::string path;  // audio file (prepare) or mel cache, relative to the manifest directory
  RecordingMeta meta;
  Split split = Split::kTrain;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }

  std::vector<ManifestEntry> subset(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }

  Manifest with_split(Split s) const { return Manifest{subset(s), base_dir}; }
};

inline constexpr const char* kManifestHeader = "id,path,singer,technique,vowel,style,split";

inline void validate(const Manifest& m, const ClassCounts& counts = {}) {
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    if (e.meta.id.empty()) throw InvalidManifest("manifest: empty id");
    if (!ids.insert(e.meta.id).second) throw InvalidManifest("manifest: duplicate id '" + e.meta.id + "'");
    if (e.meta.singer >= counts.singers || e.meta.technique >= counts.techniques || e.meta.vowel >= counts.vowels)
      throw InvalidManifest("manifest: label index out of range for '" + e.meta.id + "'");
  }
}

inline std::string encode_manifest(const Manifest& m) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& e : m.entries)
    os << e.meta.id << ',' << e.path << ',' << e.meta.singer << ',' << e.meta.technique << ',' << e.meta.vowel
       << ',' << to_string(e.meta.style) << ',' << to_string(e.split) << '\n';
  return os.str();
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  validate(m);
  for (const auto& e : m.entries)
    if (e.path.find(',') != std::string::npos || e.meta.id.find(',') != std::string::npos)
      throw InvalidManifest("manifest: commas are not allowed in ids or paths");
  io::write_atomic(path, encode_manifest(m));
}

namespace detail {
inline std::size_t parse_index(const std::string& s, const std::string& field, std::size_t line) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size())
    throw InvalidManifest("manifest line " + std::to_string(line) + ": bad " + field + " '" + s + "'");
  return v;
}
}  // namespace detail

inline Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw InvalidManifest("manifest: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) throw InvalidManifest("manifest: header must be '" + std::string(kManifestHeader) + "'");
  Manifest m;
  m.base_dir = base_dir;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw InvalidManifest("manifest line " + std::to_string(lineno) + ": expected 7 fields");
    ManifestEntry e;
    e.meta.id = f[0];
    e.path = f[1];
    e.meta.singer = detail::parse_index(f[2], "singer", lineno);
    e.meta.technique = detail::parse_index(f[3], "technique", lineno);
    e.meta.vowel = detail::parse_index(f[4], "vowel", lineno);
    if (f[5] == "scale") e.meta.style = Style::kScale;
    else if (f[5] == "arpeggios") e.meta.style = Style::kArpeggios;
    else throw InvalidManifest("manifest line " + std::to_string(lineno) + ": bad style '" + f[5] + "'");
    if (f[6] == "train") e.split = Split::kTrain;
    else if (f[6] == "test") e.split = Split::kTest;
    else throw InvalidManifest("manifest line " + std::to_string(lineno) + ": bad split '" + f[6] + "'");
    m.entries.push_back(std::move(e));
  }
  return m;
}

// Reads and validates a manifest; with check_files every referenced file must exist.
inline Manifest read_manifest(const std::filesystem::path& path, bool check_files = true,
                              const ClassCounts& counts = {}) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const InvalidInput& e) {
    throw InvalidManifest(e.what());
  }
  Manifest m = parse_manifest(text, path.parent_path());
  validate(m, counts);
  if (check_files)
    for (const auto& e : m.entries)
      if (!std::filesystem::exists(m.resolve(e)))
        throw InvalidManifest("manifest: missing file " + m.resolve(e).string());
  return m;
}

}  // namespace gmvc::features
