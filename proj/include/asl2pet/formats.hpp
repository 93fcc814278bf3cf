/*
 * asl2pet: semi-supervised ASL/T1w to PET translation
 *
 * Copyright 2026 The asl2pet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// On-disk formats.
//
// Slice: a raw little-endian float32 array (row-major, height x width) with a
// text sidecar:
//
//   ASL2PET-SLICE 1
//   subject <id>
//   modality ASL|T1|PET
//   height <h>
//   width <w>
//   lo <normalization lower bound>
//   hi <normalization upper bound>
//   data <raw file name, relative to the sidecar>
//   checksum <fnv1a64 hex of the raw bytes>
//
// Manifest: JSON Lines. The first line is a header object
// {"format":"ASL2PET-MANIFEST","version":1,"count":N}; each following line
// describes one subject. Paths are relative to the manifest's directory.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl2pet/common.hpp"
#include "asl2pet/slice.hpp"

namespace asl2pet {

namespace fs = std::filesystem;

inline constexpr const char* kSliceMagic = "ASL2PET-SLICE";
inline constexpr int kSliceVersion = 1;
inline constexpr const char* kManifestMagic = "ASL2PET-MANIFEST";
inline constexpr int kManifestVersion = 1;

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string encode_f32_le(std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
  return bytes;
}

inline std::vector<float> decode_f32_le(const std::string& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b)
      u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename so readers never see partial files.
inline void write_file_atomic(const fs::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

struct SliceFileRef {
  std::string header;  // sidecar path, relative to the manifest directory
  std::string raw;
  std::string checksum;
  NormRange range;
};

struct ManifestEntry {
  int subject_id = 0;
  bool paired = false;
  bool activated = false;
  int height = 0;
  int width = 0;
  std::map<Modality, SliceFileRef> files;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  fs::path directory;  // where relative paths resolve

  std::size_t paired_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.paired;
    return n;
  }
};

inline const char* modality_key(Modality m) {
  switch (m) {
    case Modality::ASL: return "asl";
    case Modality::T1: return "t1";
    case Modality::PET: return "pet";
  }
  return "?";
}

/// Writes `<stem>.f32` and `<stem>.hdr` into `dir`; returns the reference.
inline SliceFileRef write_slice(const fs::path& dir, const std::string& stem,
                                std::span<const float> raw, int height, int width,
                                Modality modality, int subject_id, NormRange range) {
  const std::string bytes = encode_f32_le(raw);
  const std::string checksum = digest_hex(bytes);
  SliceFileRef ref{stem + ".hdr", stem + ".f32", checksum, range};
  std::ostringstream hdr;
  hdr << kSliceMagic << ' ' << kSliceVersion << '\n'
      << "subject " << subject_id << '\n'
      << "modality " << to_string(modality) << '\n'
      << "height " << height << '\n'
      << "width " << width << '\n'
      << "lo " << format_double(range.lo) << '\n'
      << "hi " << format_double(range.hi) << '\n'
      << "data " << ref.raw << '\n'
      << "checksum " << checksum << '\n';
  write_file_atomic(dir / ref.raw, bytes);
  write_file_atomic(dir / ref.header, hdr.str());
  return ref;
}

struct SliceHeader {
  int subject_id = 0;
  Modality modality = Modality::ASL;
  int height = 0, width = 0;
  NormRange range;
  std::string data;
  std::string checksum;
};

inline SliceHeader parse_slice_header(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kSliceMagic || version != kSliceVersion)
    fail(ErrorCode::VersionMismatch, origin + ": expected " + kSliceMagic + " " +
                                         std::to_string(kSliceVersion));
  SliceHeader h;
  std::string key;
  while (in >> key) {
    if (key == "subject") in >> h.subject_id;
    else if (key == "modality") {
      std::string m;
      in >> m;
      h.modality = modality_from_string(m);
    } else if (key == "height") in >> h.height;
    else if (key == "width") in >> h.width;
    else if (key == "lo") in >> h.range.lo;
    else if (key == "hi") in >> h.range.hi;
    else if (key == "data") in >> h.data;
    else if (key == "checksum") in >> h.checksum;
    else fail(ErrorCode::VersionMismatch, origin + ": unknown header key '" + key + "'");
  }
  if (h.height <= 0 || h.width <= 0 || h.data.empty())
    fail(ErrorCode::VersionMismatch, origin + ": incomplete header");
  return h;
}

/// Reads a slice, verifies its checksum against both the sidecar and
/// `expected_checksum` (when non-empty), and normalizes it.
inline Slice read_slice(const fs::path& header_path, const std::string& expected_checksum = {}) {
  const SliceHeader h = parse_slice_header(read_file(header_path), header_path.string());
  const fs::path raw_path = header_path.parent_path() / h.data;
  const std::string bytes = read_file(raw_path);
  const std::string sum = digest_hex(bytes);
  if (sum != h.checksum || (!expected_checksum.empty() && sum != expected_checksum))
    fail(ErrorCode::ChecksumMismatch, raw_path.string());
  if (bytes.size() != static_cast<std::size_t>(h.height) * h.width * 4)
    fail(ErrorCode::ChecksumMismatch, raw_path.string() + " has the wrong size");
  const auto raw = decode_f32_le(bytes);
  return normalize(raw, h.height, h.width, h.range.lo, h.range.hi, h.modality, h.subject_id);
}

inline nlohmann::ordered_json to_json(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["subject_id"] = e.subject_id;
  j["paired"] = e.paired;
  j["condition"] = e.activated ? "activated" : "resting";
  j["height"] = e.height;
  j["width"] = e.width;
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& [m, ref] : e.files)
    files[modality_key(m)] = {{"header", ref.header},
                              {"raw", ref.raw},
                              {"checksum", ref.checksum},
                              {"lo", ref.range.lo},
                              {"hi", ref.range.hi}};
  j["files"] = files;
  return j;
}

inline std::string manifest_text(const Manifest& m) {
  std::string out = nlohmann::ordered_json{{"format", kManifestMagic},
                                           {"version", kManifestVersion},
                                           {"count", m.entries.size()}}
                        .dump() +
                    "\n";
  for (const auto& e : m.entries) out += to_json(e).dump() + "\n";
  return out;
}

inline void write_manifest(const Manifest& m, const fs::path& path) {
  write_file_atomic(path, manifest_text(m));
}

inline Manifest parse_manifest(const std::string& text, const fs::path& directory,
                               const std::string& origin) {
  Manifest m;
  m.directory = directory;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  std::size_t expected = 0;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!header) {
        if (j.value("format", "") != kManifestMagic || j.value("version", 0) != kManifestVersion)
          fail(ErrorCode::VersionMismatch, origin + ": not a version " +
                                               std::to_string(kManifestVersion) + " manifest");
        expected = j.at("count").get<std::size_t>();
        header = true;
        continue;
      }
      ManifestEntry e;
      e.subject_id = j.at("subject_id").get<int>();
      e.paired = j.at("paired").get<bool>();
      e.activated = j.at("condition").get<std::string>() == "activated";
      e.height = j.at("height").get<int>();
      e.width = j.at("width").get<int>();
      for (auto m_ : {Modality::ASL, Modality::T1, Modality::PET}) {
        const auto& files = j.at("files");
        if (!files.contains(modality_key(m_))) continue;
        const auto& f = files.at(modality_key(m_));
        e.files[m_] = SliceFileRef{f.at("header").get<std::string>(), f.at("raw").get<std::string>(),
                                   f.at("checksum").get<std::string>(),
                                   NormRange{f.at("lo").get<double>(), f.at("hi").get<double>()}};
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::VersionMismatch, origin + ": malformed manifest (" + ex.what() + ")");
  }
  if (!header) fail(ErrorCode::VersionMismatch, origin + ": missing manifest header");
  if (m.entries.size() != expected)
    fail(ErrorCode::VersionMismatch, origin + ": manifest count mismatch");
  return m;
}

inline Manifest read_manifest(const fs::path& path) {
  return parse_manifest(read_file(path), path.parent_path(), path.string());
}

inline std::string manifest_digest(const Manifest& m) { return digest_hex(manifest_text(m)); }

}  // namespace asl2pet
