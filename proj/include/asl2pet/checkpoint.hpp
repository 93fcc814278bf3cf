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

// Checkpoint archive:
//
//   "ASL2PET-CKPT"  12 bytes
//   version          u32 little-endian
//   header length    u64 little-endian
//   header           JSON: model config and its hash, training counters,
//                    and an index of named float32 arrays (kind, size, offset)
//   payload          the arrays, little-endian float32, back to back
//
// Arrays are network parameters ("param"), batch-norm running statistics
// ("buffer") and Adam moments ("adam_m" / "adam_v"). Loading checks the
// magic, the version and that the stored config hash matches the target
// network's config.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl2pet/common.hpp"
#include "asl2pet/formats.hpp"
#include "asl2pet/model.hpp"
#include "asl2pet/optim.hpp"

namespace asl2pet {

inline constexpr char kCheckpointMagic[] = "ASL2PET-CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainCounters {
  std::uint64_t iteration = 0;
  std::uint64_t paired_drawn = 0;
  std::uint64_t unpaired_drawn = 0;
  bool operator==(const TrainCounters&) const = default;
};

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_uint(const std::string& s, std::size_t pos, int bytes) {
  if (pos + bytes > s.size()) fail(ErrorCode::VersionMismatch, "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const fs::path& path, Network<T>& net, const Adam<T>* adam,
                     const TrainCounters& counters, const nlohmann::json& extra = {}) {
  nlohmann::ordered_json header;
  header["config"] = to_json(net.config());
  header["config_hash"] = config_hash(net.config());
  header["counters"] = {{"iteration", counters.iteration},
                        {"paired_drawn", counters.paired_drawn},
                        {"unpaired_drawn", counters.unpaired_drawn}};
  if (!extra.is_null()) header["extra"] = extra;

  std::vector<float> payload;
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  auto add = [&](const std::string& name, const std::string& kind, const std::vector<T>& v) {
    index.push_back({{"name", name}, {"kind", kind}, {"size", v.size()}, {"offset", payload.size()}});
    for (T x : v) payload.push_back(static_cast<float>(x));
  };
  for (auto* p : net.params()) add(p->name, "param", p->value);
  for (const auto& b : net.buffers()) add(b.name, "buffer", *b.data);
  nlohmann::ordered_json steps = nlohmann::ordered_json::object();
  if (adam)
    for (const auto& [name, slot] : adam->slots()) {
      add(name, "adam_m", slot.m);
      add(name, "adam_v", slot.v);
      steps[name] = slot.t;
    }
  header["adam_steps"] = steps;
  header["arrays"] = index;

  const std::string json = header.dump();
  std::string blob(kCheckpointMagic, 12);
  detail::put_u32(blob, kCheckpointVersion);
  detail::put_u64(blob, json.size());
  blob += json;
  blob += encode_f32_le(payload);
  write_file_atomic(path, blob);
}

struct CheckpointInfo {
  ModelConfig config;
  TrainCounters counters;
  nlohmann::json extra;
};

namespace detail {

struct ParsedCheckpoint {
  nlohmann::json header;
  std::vector<float> payload;
};

inline ParsedCheckpoint parse_checkpoint(const fs::path& path) {
  const std::string blob = read_file(path);
  if (blob.size() < 24 || blob.compare(0, 12, kCheckpointMagic, 12) != 0)
    fail(ErrorCode::VersionMismatch, path.string() + " is not a checkpoint");
  const auto version = static_cast<std::uint32_t>(get_uint(blob, 12, 4));
  if (version != kCheckpointVersion)
    fail(ErrorCode::VersionMismatch, path.string() + ": unsupported checkpoint version " +
                                         std::to_string(version));
  const std::uint64_t len = get_uint(blob, 16, 8);
  if (24 + len > blob.size()) fail(ErrorCode::VersionMismatch, "truncated checkpoint");
  ParsedCheckpoint out;
  try {
    out.header = nlohmann::json::parse(blob.substr(24, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::VersionMismatch, std::string("corrupt checkpoint header: ") + e.what());
  }
  out.payload = decode_f32_le(blob.substr(24 + len));
  return out;
}

}  // namespace detail

inline CheckpointInfo read_checkpoint_info(const fs::path& path) {
  const auto parsed = detail::parse_checkpoint(path);
  CheckpointInfo info;
  info.config = model_config_from_json(parsed.header.at("config"));
  const auto& c = parsed.header.at("counters");
  info.counters = {c.at("iteration").get<std::uint64_t>(), c.at("paired_drawn").get<std::uint64_t>(),
                   c.at("unpaired_drawn").get<std::uint64_t>()};
  if (parsed.header.contains("extra")) info.extra = parsed.header["extra"];
  return info;
}

/// Restores parameters, running statistics and (when given) optimizer state.
template <typename T>
TrainCounters load_checkpoint(const fs::path& path, Network<T>& net, Adam<T>* adam = nullptr) {
  const auto parsed = detail::parse_checkpoint(path);
  const auto& h = parsed.header;
  if (h.at("config_hash").get<std::string>() != config_hash(net.config()))
    fail(ErrorCode::ConfigError, path.string() + " was written for a different model config");

  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> arrays;
  for (const auto& a : h.at("arrays"))
    arrays[{a.at("kind").get<std::string>(), a.at("name").get<std::string>()}] = {
        a.at("offset").get<std::size_t>(), a.at("size").get<std::size_t>()};
  auto fetch = [&](const std::string& kind, const std::string& name, std::vector<T>& dst) {
    const auto it = arrays.find({kind, name});
    if (it == arrays.end()) fail(ErrorCode::ConfigError, "checkpoint lacks " + kind + " " + name);
    const auto [offset, size] = it->second;
    if (offset + size > parsed.payload.size())
      fail(ErrorCode::VersionMismatch, "checkpoint payload truncated");
    dst.resize(size);
    for (std::size_t i = 0; i < size; ++i) dst[i] = static_cast<T>(parsed.payload[offset + i]);
  };
  for (auto* p : net.params()) {
    const std::size_t expected = p->size();
    fetch("param", p->name, p->value);
    if (p->value.size() != expected) fail(ErrorCode::ConfigError, "size mismatch for " + p->name);
  }
  for (const auto& b : net.buffers()) fetch("buffer", b.name, *b.data);
  if (adam) {
    adam->slots().clear();
    for (const auto& [name, t] : h.at("adam_steps").items()) {
      auto& slot = adam->slots()[name];
      fetch("adam_m", name, slot.m);
      fetch("adam_v", name, slot.v);
      slot.t = t.template get<std::uint64_t>();
    }
  }
  const auto& c = h.at("counters");
  return {c.at("iteration").get<std::uint64_t>(), c.at("paired_drawn").get<std::uint64_t>(),
          c.at("unpaired_drawn").get<std::uint64_t>()};
}

}  // namespace asl2pet
