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

// Semi-supervised alternating training.
//
// Iterations come in coarse/fine pairs: even iterations are coarse (uniform
// mask, i.e. M = 1 everywhere), odd iterations are fine (the residual mask
// computed during the preceding coarse step on the same samples). The data
// pool switches between paired and unpaired every `dataset_block`
// iterations. With an odd block length a fine step can open a block; it then
// draws a fresh batch from the new pool and computes that batch's mask with a
// uniform-mask forward pass that updates nothing.
//
// Paired steps train every parameter against 0.5 (1 - SSIM(PET)) +
// 0.5 (1 - SSIM(ASL)). Unpaired steps run only the encoder and the ASL
// decoder against 1 - SSIM(ASL), and only those groups are stepped, so the
// PET decoder and the skip gates stay bit-identical.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl2pet/checkpoint.hpp"
#include "asl2pet/common.hpp"
#include "asl2pet/datasets.hpp"
#include "asl2pet/losses.hpp"
#include "asl2pet/model.hpp"
#include "asl2pet/optim.hpp"

namespace asl2pet {

enum class Phase { coarse, fine };

inline const char* to_string(Phase p) { return p == Phase::coarse ? "coarse" : "fine"; }

struct TrainSchedule {
  std::uint64_t total_iterations = 2000;
  int dataset_block = 5;
  int batch_size = 4;
  AdamOptions optimizer{};
  /// Checkpoint period in iterations (even); 0 disables checkpoints.
  std::uint64_t checkpoint_every = 0;
  std::uint64_t seed = 0;
  int loader_workers = 2;

  void validate() const {
    if (total_iterations % 2 != 0)
      fail(ErrorCode::ConfigError, "total_iterations must be even (equal coarse/fine split)");
    if (dataset_block < 1) fail(ErrorCode::ConfigError, "dataset_block must be >= 1");
    if (batch_size < 1) fail(ErrorCode::ConfigError, "batch_size must be >= 1");
    if (checkpoint_every % 2 != 0) fail(ErrorCode::ConfigError, "checkpoint_every must be even");
    if (!(optimizer.lr > 0.0)) fail(ErrorCode::ConfigError, "learning rate must be positive");
  }
};

inline nlohmann::ordered_json to_json(const TrainSchedule& s) {
  return {{"total_iterations", s.total_iterations},
          {"dataset_block", s.dataset_block},
          {"batch_size", s.batch_size},
          {"lr", s.optimizer.lr},
          {"beta1", s.optimizer.beta1},
          {"beta2", s.optimizer.beta2},
          {"eps", s.optimizer.eps},
          {"checkpoint_every", s.checkpoint_every},
          {"seed", s.seed},
          {"loader_workers", s.loader_workers}};
}

inline TrainSchedule schedule_from_json(const nlohmann::json& j, TrainSchedule s = {}) {
  if (j.contains("total_iterations")) s.total_iterations = j["total_iterations"].get<std::uint64_t>();
  if (j.contains("dataset_block")) s.dataset_block = j["dataset_block"].get<int>();
  if (j.contains("batch_size")) s.batch_size = j["batch_size"].get<int>();
  if (j.contains("lr")) s.optimizer.lr = j["lr"].get<double>();
  if (j.contains("beta1")) s.optimizer.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) s.optimizer.beta2 = j["beta2"].get<double>();
  if (j.contains("eps")) s.optimizer.eps = j["eps"].get<double>();
  if (j.contains("checkpoint_every")) s.checkpoint_every = j["checkpoint_every"].get<std::uint64_t>();
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("loader_workers")) s.loader_workers = j["loader_workers"].get<int>();
  return s;
}

inline Phase phase_at(std::uint64_t iteration) {
  return iteration % 2 == 0 ? Phase::coarse : Phase::fine;
}

/// Pool used at an iteration. Single-task training only ever sees paired data.
inline Pairing dataset_at(std::uint64_t iteration, int dataset_block, bool multitask) {
  if (!multitask) return Pairing::paired;
  return (iteration / static_cast<std::uint64_t>(dataset_block)) % 2 == 0 ? Pairing::paired
                                                                          : Pairing::unpaired;
}

struct StepRecord {
  std::uint64_t iteration = 0;
  Phase phase = Phase::coarse;
  Pairing dataset = Pairing::paired;
  double loss = 0.0;
  double pet_ssim = std::numeric_limits<double>::quiet_NaN();
  double asl_ssim = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;
  std::vector<int> subject_ids;
};

inline std::string to_jsonl(const StepRecord& r) {
  nlohmann::ordered_json j{{"iteration", r.iteration},
                           {"phase", to_string(r.phase)},
                           {"dataset", to_string(r.dataset)},
                           {"loss", r.loss}};
  if (!std::isnan(r.pet_ssim)) j["pet_ssim"] = r.pet_ssim;
  if (!std::isnan(r.asl_ssim)) j["asl_ssim"] = r.asl_ssim;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

/// Groups an unpaired step may update.
inline const std::vector<Group>& unpaired_groups() {
  static const std::vector<Group> g{Group::encoder, Group::asl_decoder};
  return g;
}
inline const std::vector<Group>& all_groups() {
  static const std::vector<Group> g{Group::encoder, Group::pet_decoder, Group::asl_decoder, Group::gates};
  return g;
}

/// Single-step engine: owns the optimizer and the cached coarse-step masks.
class Trainer {
 public:
  Trainer(Network<float>& net, const TrainSchedule& schedule)
      : net_(net), schedule_(schedule), adam_(schedule.optimizer) {
    schedule_.validate();
  }

  std::uint64_t iteration() const { return iteration_; }
  void set_iteration(std::uint64_t it) {
    iteration_ = it;
    cache_.reset();
  }
  Phase phase() const { return phase_at(iteration_); }
  Pairing active_dataset() const {
    return dataset_at(iteration_, schedule_.dataset_block, net_.config().multitask);
  }
  Adam<float>& optimizer() { return adam_; }

  /// True when the next step is fine and has no cached mask for `batch`.
  bool needs_mask(const Batch& batch) const {
    if (!net_.config().use_residual_attention || phase() != Phase::fine) return false;
    return !cache_ || cache_->subject_ids != batch.subject_ids || cache_->paired != batch.paired;
  }

  /// Computes and caches the residual mask for `batch` with a uniform-mask
  /// pass that neither updates parameters nor touches running statistics.
  void prime_mask(const Batch& batch) {
    if (!net_.config().use_residual_attention) return;
    auto r = forward(net_, batch, static_cast<const Tensor<float>*>(nullptr), BnMode::train_frozen, false);
    cache_ = Cache{batch.subject_ids, batch.paired, std::move(*r.residual_mask)};
  }

  /// The mask cached for the next fine step, if any.
  const Tensor<float>* cached_mask() const { return cache_ ? &cache_->mask : nullptr; }

  StepRecord step(const Batch& batch) {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig& cfg = net_.config();
    const Phase ph = phase();
    const Pairing expected = active_dataset();
    if (batch.paired != (expected == Pairing::paired))
      fail(ErrorCode::ScheduleViolation, "iteration " + std::to_string(iteration_) + " expects a " +
                                             to_string(expected) + " batch");
    if (batch.paired && !batch.pet) fail(ErrorCode::ScheduleViolation, "paired batch without PET");

    const Tensor<float>* mask = nullptr;
    if (cfg.use_residual_attention && ph == Phase::fine) {
      if (needs_mask(batch))
        fail(ErrorCode::ScheduleViolation, "fine step at iteration " + std::to_string(iteration_) +
                                               " has no cached mask for this batch");
      mask = &cache_->mask;
    }

    const bool paired = batch.paired;
    auto out = forward(net_, batch, mask, BnMode::train, paired);

    StepRecord rec;
    rec.iteration = iteration_;
    rec.phase = ph;
    rec.dataset = expected;
    rec.subject_ids = batch.subject_ids;

    LossGrad<float> lg;
    if (paired) {
      lg = paired_loss_grad(*out.pet_pred, *batch.pet, cfg.multitask ? &*out.asl_recon : nullptr,
                            cfg.multitask ? &batch.asl : nullptr);
    } else {
      lg = unpaired_loss_grad(*out.asl_recon, batch.asl);
    }
    rec.loss = lg.value;
    rec.pet_ssim = lg.pet_ssim;
    rec.asl_ssim = lg.asl_ssim;

    net_.zero_grad();
    net_.backward(lg.d_pet ? &*lg.d_pet : nullptr, lg.d_asl ? &*lg.d_asl : nullptr);
    adam_.step(net_.params(), paired ? all_groups() : unpaired_groups());

    // The coarse pass's mask (from the pre-update reconstruction) drives the
    // fine pass on the same samples. It is a plain tensor: no gradient path.
    if (cfg.use_residual_attention && ph == Phase::coarse)
      cache_ = Cache{batch.subject_ids, batch.paired, std::move(*out.residual_mask)};
    else
      cache_.reset();

    ++iteration_;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

 private:
  struct Cache {
    std::vector<int> subject_ids;
    bool paired;
    Tensor<float> mask;
  };

  Network<float>& net_;
  TrainSchedule schedule_;
  Adam<float> adam_;
  std::uint64_t iteration_ = 0;
  std::optional<Cache> cache_;
};

struct TrainOptions {
  /// Directory for periodic checkpoints (checkpoint_every > 0).
  fs::path checkpoint_dir;
  /// Resume from this checkpoint instead of starting fresh.
  std::optional<fs::path> resume_from;
  /// Stop after this iteration count (defaults to the schedule's total).
  std::optional<std::uint64_t> stop_at;
  /// Called once per completed step.
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  Network<float> net;
  std::vector<StepRecord> history;
  TrainCounters counters;
  bool unpaired_ignored = false;
};

inline std::uint64_t network_seed(std::uint64_t seed) { return derive_seed(seed, 0x6e6574); }

/// Runs the schedule. Deterministic for a fixed (config, schedule, data).
inline TrainResult train(const ModelConfig& config, const TrainSchedule& schedule,
                         std::shared_ptr<const DatasetHandle> paired,
                         std::shared_ptr<const DatasetHandle> unpaired, const TrainOptions& opt = {}) {
  config.validate();
  schedule.validate();
  TrainResult result{build<float>(config, network_seed(schedule.seed)), {}, {}, false};
  Network<float>& net = result.net;
  Trainer trainer(net, schedule);

  if (!paired || paired->paired_count() == 0) fail(ErrorCode::EmptyPool, "no paired subjects");
  if (!config.multitask) {
    result.unpaired_ignored = unpaired && !unpaired->empty();
  } else if (!unpaired || unpaired->unpaired_count() == 0) {
    fail(ErrorCode::EmptyPool, "multitask training needs unpaired subjects");
  }

  TrainCounters counters;
  if (opt.resume_from) {
    counters = load_checkpoint(*opt.resume_from, net, &trainer.optimizer());
    trainer.set_iteration(counters.iteration);
  }

  auto make_stream = [&](std::shared_ptr<const DatasetHandle> h, Pairing p, std::uint64_t start) {
    StreamOptions so;
    so.batch_size = schedule.batch_size;
    so.pairing = p;
    so.seed = derive_seed(schedule.seed, p == Pairing::paired ? 0x7061 : 0x756e);
    so.with_t1 = config.use_t1;
    so.workers = schedule.loader_workers;
    so.start = start;
    return std::make_unique<BatchStream>(std::move(h), so);
  };
  auto paired_stream = make_stream(paired, Pairing::paired, counters.paired_drawn);
  std::unique_ptr<BatchStream> unpaired_stream;
  if (config.multitask) unpaired_stream = make_stream(unpaired, Pairing::unpaired, counters.unpaired_drawn);

  const std::uint64_t stop = std::min(opt.stop_at.value_or(schedule.total_iterations), schedule.total_iterations);
  std::optional<Batch> current;
  while (counters.iteration < stop) {
    const Pairing pool = trainer.active_dataset();
    const bool reuse = trainer.phase() == Phase::fine && current &&
                       current->paired == (pool == Pairing::paired);
    if (!reuse) {
      if (pool == Pairing::paired) {
        current = paired_stream->next();
        ++counters.paired_drawn;
      } else {
        current = unpaired_stream->next();
        ++counters.unpaired_drawn;
      }
      if (trainer.needs_mask(*current)) trainer.prime_mask(*current);
    }
    StepRecord rec = trainer.step(*current);
    counters.iteration = trainer.iteration();
    if (opt.on_step) opt.on_step(rec);
    result.history.push_back(std::move(rec));

    if (schedule.checkpoint_every > 0 && counters.iteration % schedule.checkpoint_every == 0) {
      save_checkpoint(opt.checkpoint_dir / ("ckpt_" + std::to_string(counters.iteration) + ".bin"), net,
                      &trainer.optimizer(), counters, to_json(schedule));
    }
    if (trainer.phase() == Phase::coarse) current.reset();
  }
  result.counters = counters;
  return result;
}

/// Trainable parameter count of a group, or of the whole network.
template <typename T>
std::size_t count_parameters(const Network<T>& net, std::optional<Group> group = std::nullopt) {
  return group ? net.parameter_count(*group) : net.parameter_count();
}

}  // namespace asl2pet
