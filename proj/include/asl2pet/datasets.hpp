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

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "asl2pet/common.hpp"
#include "asl2pet/formats.hpp"
#include "asl2pet/slice.hpp"
#include "asl2pet/tensor.hpp"

namespace asl2pet {

struct Subject {
  int id = 0;
  bool paired = false;
  bool activated = false;
  Slice asl;
  Slice t1;
  std::optional<Slice> pet;
};

enum class Pairing { paired, unpaired };

inline const char* to_string(Pairing p) { return p == Pairing::paired ? "paired" : "unpaired"; }

/// Immutable, fully loaded subject collection.
class DatasetHandle {
 public:
  DatasetHandle() = default;
  explicit DatasetHandle(std::vector<Subject> subjects, std::string digest = {})
      : subjects_(std::move(subjects)), digest_(std::move(digest)) {
    for (std::size_t i = 1; i < subjects_.size(); ++i)
      if (subjects_[i].asl.height != subjects_[0].asl.height ||
          subjects_[i].asl.width != subjects_[0].asl.width)
        fail(ErrorCode::ShapeMismatch, "subjects have different grid sizes");
  }

  const std::vector<Subject>& subjects() const { return subjects_; }
  std::size_t size() const { return subjects_.size(); }
  bool empty() const { return subjects_.empty(); }
  const std::string& digest() const { return digest_; }

  std::size_t count(Pairing p) const { return indices(p).size(); }
  std::size_t paired_count() const { return count(Pairing::paired); }
  std::size_t unpaired_count() const { return count(Pairing::unpaired); }

  /// Positions (into subjects()) of the requested pairing class, in manifest order.
  std::vector<std::size_t> indices(Pairing p) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < subjects_.size(); ++i)
      if (subjects_[i].paired == (p == Pairing::paired)) out.push_back(i);
    return out;
  }

  const Subject& by_id(int id) const {
    for (const auto& s : subjects_)
      if (s.id == id) return s;
    fail(ErrorCode::MissingFile, "no subject with id " + std::to_string(id));
  }

  /// Sub-collection keeping only the listed subject ids (in manifest order).
  DatasetHandle select(const std::vector<int>& ids) const {
    std::vector<Subject> out;
    for (const auto& s : subjects_)
      if (std::find(ids.begin(), ids.end(), s.id) != ids.end()) out.push_back(s);
    return DatasetHandle(std::move(out), digest_);
  }

  int height() const { return empty() ? 0 : subjects_[0].asl.height; }
  int width() const { return empty() ? 0 : subjects_[0].asl.width; }

 private:
  std::vector<Subject> subjects_;
  std::string digest_;
};

/// Reads and checksum-verifies every slice listed in the manifest.
inline DatasetHandle load_manifest(const fs::path& path) {
  const Manifest m = read_manifest(path);
  std::vector<Subject> subjects;
  subjects.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    Subject s;
    s.id = e.subject_id;
    s.paired = e.paired;
    s.activated = e.activated;
    auto load = [&](Modality mod) -> std::optional<Slice> {
      const auto it = e.files.find(mod);
      if (it == e.files.end()) return std::nullopt;
      Slice sl = read_slice(m.directory / it->second.header, it->second.checksum);
      if (sl.height != e.height || sl.width != e.width || sl.subject_id != e.subject_id ||
          sl.modality != mod)
        fail(ErrorCode::ChecksumMismatch, "slice metadata disagrees with manifest for subject " +
                                              std::to_string(e.subject_id));
      return sl;
    };
    auto asl = load(Modality::ASL);
    auto t1 = load(Modality::T1);
    if (!asl || !t1)
      fail(ErrorCode::MissingFile, "subject " + std::to_string(e.subject_id) + " lacks ASL or T1");
    s.asl = std::move(*asl);
    s.t1 = std::move(*t1);
    s.pet = load(Modality::PET);
    if (s.paired != s.pet.has_value())
      fail(ErrorCode::MissingFile, "subject " + std::to_string(e.subject_id) +
                                       " pairing flag disagrees with PET presence");
    subjects.push_back(std::move(s));
  }
  return DatasetHandle(std::move(subjects), manifest_digest(m));
}

struct Batch {
  Tensor<float> asl;
  std::optional<Tensor<float>> t1;
  std::optional<Tensor<float>> pet;
  bool paired = false;
  std::vector<int> subject_ids;

  int size() const { return asl.n(); }
};

inline void stack_into(const Slice& s, Tensor<float>& t, int n) {
  std::copy(s.pixels.begin(), s.pixels.end(), t.plane(n, 0));
}

/// Stacks the given subjects (positions into handle.subjects()) into a batch.
inline Batch make_batch(const DatasetHandle& handle, const std::vector<std::size_t>& members,
                        bool with_t1, bool with_pet) {
  if (members.empty()) fail(ErrorCode::EmptyPool, "batch needs at least one subject");
  const int b = static_cast<int>(members.size()), h = handle.height(), w = handle.width();
  Batch batch;
  batch.asl = Tensor<float>(b, 1, h, w);
  if (with_t1) batch.t1 = Tensor<float>(b, 1, h, w);
  if (with_pet) batch.pet = Tensor<float>(b, 1, h, w);
  batch.paired = with_pet;
  for (int i = 0; i < b; ++i) {
    const Subject& s = handle.subjects()[members[i]];
    if (with_pet && !s.pet)
      fail(ErrorCode::EmptyPool, "subject " + std::to_string(s.id) + " has no PET");
    stack_into(s.asl, batch.asl, i);
    if (with_t1) stack_into(s.t1, *batch.t1, i);
    if (with_pet) stack_into(*s.pet, *batch.pet, i);
    batch.subject_ids.push_back(s.id);
  }
  return batch;
}

struct StreamOptions {
  int batch_size = 4;
  Pairing pairing = Pairing::paired;
  std::uint64_t seed = 0;
  bool with_t1 = true;
  int workers = 2;
  int queue_depth = 32;
  /// Index of the first batch to yield (for resuming).
  std::uint64_t start = 0;
};

/// Deterministic batch schedule over one pairing class. Batch k belongs to
/// epoch k / per_epoch; each epoch is a seeded permutation of the pool and the
/// trailing partial batch is dropped. When the pool is smaller than the batch
/// size, each epoch is a single batch holding the whole pool.
class BatchPlan {
 public:
  BatchPlan(const DatasetHandle& handle, const StreamOptions& opt)
      : pool_(handle.indices(opt.pairing)), opt_(opt) {
    if (pool_.empty())
      fail(ErrorCode::EmptyPool, std::string("no ") + to_string(opt.pairing) + " subjects");
    if (opt.batch_size <= 0) fail(ErrorCode::ConfigError, "batch size must be positive");
    batch_ = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), pool_.size());
    per_epoch_ = pool_.size() / batch_;
  }

  std::size_t batch_size() const { return batch_; }
  std::size_t batches_per_epoch() const { return per_epoch_; }

  std::vector<std::size_t> members(std::uint64_t k) const {
    const std::uint64_t epoch = k / per_epoch_;
    const std::size_t pos = static_cast<std::size_t>(k % per_epoch_);
    Rng rng(derive_seed(opt_.seed, epoch));
    const auto perm = permutation(pool_.size(), rng);
    std::vector<std::size_t> out(batch_);
    for (std::size_t i = 0; i < batch_; ++i) out[i] = pool_[perm[pos * batch_ + i]];
    return out;
  }

 private:
  std::vector<std::size_t> pool_;
  StreamOptions opt_;
  std::size_t batch_ = 0;
  std::size_t per_epoch_ = 0;
};

/// Endless batch stream fed by background workers through a bounded queue.
/// Batches are yielded strictly in plan order whatever the worker count.
class BatchStream {
 public:
  BatchStream(std::shared_ptr<const DatasetHandle> handle, StreamOptions opt)
      : handle_(std::move(handle)), opt_(opt), plan_(*handle_, opt_), next_claim_(opt.start),
        next_yield_(opt.start) {
    if (opt_.queue_depth < 1) opt_.queue_depth = 1;
    const int workers = std::max(1, opt_.workers);
    for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { work(); });
  }

  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  ~BatchStream() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    space_.notify_all();
    ready_.notify_all();
    for (auto& t : threads_) t.join();
  }

  Batch next() {
    std::unique_lock lock(mu_);
    ready_.wait(lock, [&] { return stop_ || error_ || done_.count(next_yield_); });
    if (error_) std::rethrow_exception(error_);
    auto node = done_.extract(next_yield_);
    ++next_yield_;
    lock.unlock();
    space_.notify_all();
    return std::move(node.mapped());
  }

  /// Number of batches handed to the consumer so far, counting `start`.
  std::uint64_t position() const {
    std::lock_guard lock(mu_);
    return next_yield_;
  }

  const BatchPlan& plan() const { return plan_; }

 private:
  void work() {
    for (;;) {
      std::uint64_t k;
      {
        std::unique_lock lock(mu_);
        space_.wait(lock, [&] {
          return stop_ || next_claim_ < next_yield_ + static_cast<std::uint64_t>(opt_.queue_depth);
        });
        if (stop_) return;
        k = next_claim_++;
      }
      try {
        Batch b = make_batch(*handle_, plan_.members(k), opt_.with_t1,
                             opt_.pairing == Pairing::paired);
        std::lock_guard lock(mu_);
        done_.emplace(k, std::move(b));
      } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::current_exception();
      }
      ready_.notify_all();
    }
  }

  std::shared_ptr<const DatasetHandle> handle_;
  StreamOptions opt_;
  BatchPlan plan_;
  mutable std::mutex mu_;
  std::condition_variable space_, ready_;
  std::map<std::uint64_t, Batch> done_;
  std::uint64_t next_claim_;
  std::uint64_t next_yield_;
  bool stop_ = false;
  std::exception_ptr error_;
  std::vector<std::thread> threads_;
};

}  // namespace asl2pet
