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

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace asl2pet {

enum class ErrorCode {
  InvalidGrid,
  InvalidSpec,
  IoError,
  ChecksumMismatch,
  MissingFile,
  VersionMismatch,
  DegenerateRange,
  EmptyPool,
  ConfigError,
  ShapeMismatch,
  ScheduleViolation,
  TooFewSubjects,
  DegenerateInput,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidGrid: return "InvalidGrid";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ScheduleViolation: return "ScheduleViolation";
    case ErrorCode::TooFewSubjects: return "TooFewSubjects";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
  }
  return "Unknown";
}

/// Errors that originate from bad data on disk or in memory, as opposed to bad
/// configuration or usage. The CLI maps this split onto its exit codes.
inline bool is_data_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::ChecksumMismatch:
    case ErrorCode::MissingFile:
    case ErrorCode::VersionMismatch:
    case ErrorCode::EmptyPool:
    case ErrorCode::TooFewSubjects:
    case ErrorCode::DegenerateRange:
    case ErrorCode::DegenerateInput:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

// ---------------------------------------------------------------------------
// Random numbers.
//
// std::mt19937_64 has a standardized output sequence, but the std
// distributions do not, so uniform/normal/integer draws are derived from the
// raw 64-bit words here.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// SplitMix64 step.
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call, the pair's sine half is discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  Rng r(base ^ (tag * 0xD1B54A32D192ED03ULL));
  r.next_u64();
  return r.next_u64();
}

/// Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

// ---------------------------------------------------------------------------
// Digests. FNV-1a 64 over raw bytes; rendered as 16 lowercase hex digits.

class Digest {
 public:
  void update(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t value() const { return hash_; }
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(hash_ >> (4 * i)) & 0xF];
    return out;
  }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

inline std::string digest_hex(std::string_view s) {
  Digest d;
  d.update(s);
  return d.hex();
}

}  // namespace asl2pet
