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

#include <catch_amalgamated.hpp>

#include "asl2pet/trainer.hpp"
#include "support.hpp"

using namespace asl2pet;

namespace {

ModelConfig small_config(bool multitask = true) {
  ModelConfig c;
  c.multitask = multitask;
  c.use_residual_attention = multitask;
  c.base_channels = 4;
  c.dense_layout = {1, 2, 1};
  return c;
}

struct Fixture {
  testing::ScratchDir dir;
  std::shared_ptr<const DatasetHandle> data;
  explicit Fixture(const std::string& name, int paired = 4, int unpaired = 4, int size = 16)
      : dir("trainer_" + name) {
    data = std::make_shared<const DatasetHandle>(
        load_manifest(testing::make_corpus(dir.path / "corpus", paired, unpaired, 3, size)));
  }
  Batch batch(Pairing p, const std::vector<std::size_t>& positions) const {
    return make_batch(*data, positions, true, p == Pairing::paired);
  }
};

std::vector<std::vector<float>> snapshot(const std::vector<Param<float>*>& params) {
  std::vector<std::vector<float>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

TrainSchedule schedule(std::uint64_t iterations, std::uint64_t seed = 1) {
  TrainSchedule s;
  s.total_iterations = iterations;
  s.batch_size = 2;
  s.seed = seed;
  s.optimizer.lr = 1e-3;
  return s;
}

}  // namespace

TEST_CASE("schedule laws over 1000 iterations") {
  for (std::uint64_t it = 0; it < 1000; ++it) {
    REQUIRE((phase_at(it) == Phase::coarse) == (it % 2 == 0));
    const Pairing expected = ((it / 5) % 2 == 0) ? Pairing::paired : Pairing::unpaired;
    REQUIRE(dataset_at(it, 5, true) == expected);
    REQUIRE(dataset_at(it, 5, false) == Pairing::paired);
  }
  const std::vector<Phase> first{Phase::coarse, Phase::fine, Phase::coarse,
                                 Phase::fine,   Phase::coarse, Phase::fine};
  for (std::uint64_t it = 0; it < 6; ++it) CHECK(phase_at(it) == first[it]);
  for (std::uint64_t it : {0u, 4u, 10u, 14u}) CHECK(dataset_at(it, 5, true) == Pairing::paired);
  for (std::uint64_t it : {5u, 9u, 15u, 19u}) CHECK(dataset_at(it, 5, true) == Pairing::unpaired);
}

TEST_CASE("schedule validation and serialization") {
  TrainSchedule s;
  s.total_iterations = 3;
  CHECK_THROWS_AS(s.validate(), Error);
  s.total_iterations = 4;
  s.checkpoint_every = 3;
  CHECK_THROWS_AS(s.validate(), Error);
  s.checkpoint_every = 2;
  s.dataset_block = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  s.dataset_block = 7;
  s.optimizer.lr = 3e-4;
  const TrainSchedule back = schedule_from_json(nlohmann::json::parse(to_json(s).dump()));
  CHECK(back.dataset_block == 7);
  CHECK(back.optimizer.lr == 3e-4);
  CHECK(back.checkpoint_every == 2);
}

TEST_CASE("step rejects batches that break the schedule") {
  Fixture f("violation");
  auto net = build(small_config(), 0);
  Trainer t(net, schedule(20));
  auto code = [&](const Batch& b) {
    try {
      t.step(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  const auto unpaired = f.data->indices(Pairing::unpaired);
  const auto paired = f.data->indices(Pairing::paired);
  CHECK(code(f.batch(Pairing::unpaired, {unpaired[0], unpaired[1]})) == ErrorCode::ScheduleViolation);
  const Batch b = f.batch(Pairing::paired, {paired[0], paired[1]});
  t.step(b);
  // The fine step must replay the coarse batch.
  CHECK(code(f.batch(Pairing::paired, {paired[2], paired[3]})) == ErrorCode::ScheduleViolation);
  CHECK_NOTHROW(t.step(b));
  CHECK(t.iteration() == 2);
}

TEST_CASE("unpaired steps leave PET-exclusive parameters bit-identical") {
  Fixture f("isolation");
  for (bool da : {true, false}) {
    ModelConfig c = small_config();
    c.use_disentanglement_attention = da;
    auto net = build(c, 0);
    Trainer t(net, schedule(20));
    const auto u = f.data->indices(Pairing::unpaired);
    const Batch b = f.batch(Pairing::unpaired, {u[0], u[1]});
    t.set_iteration(5);  // fine step opening an unpaired block
    const auto pet_before = snapshot(net.params(Group::pet_decoder));
    const auto gates_before = snapshot(net.params(Group::gates));
    const auto enc_before = snapshot(net.params(Group::encoder));
    const auto asl_before = snapshot(net.params(Group::asl_decoder));
    t.prime_mask(b);
    t.step(b);  // fine
    t.step(b);  // coarse
    CHECK(snapshot(net.params(Group::pet_decoder)) == pet_before);
    CHECK(snapshot(net.params(Group::gates)) == gates_before);
    CHECK(snapshot(net.params(Group::encoder)) != enc_before);
    CHECK(snapshot(net.params(Group::asl_decoder)) != asl_before);
  }
}

TEST_CASE("fine-step masks carry no gradient") {
  Fixture f("mask");
  auto net = build(small_config(), 0);
  Trainer t(net, schedule(20));
  const auto p = f.data->indices(Pairing::paired);
  const Batch b = f.batch(Pairing::paired, {p[0], p[1]});
  const auto w = net.spatial_gate()->weight().value, bias = net.spatial_gate()->bias().value;
  t.step(b);
  REQUIRE(t.cached_mask());
  const Tensor<float> mask = *t.cached_mask();
  t.step(b);
  double norm = 0;
  for (const auto* prm : {&net.spatial_gate()->weight(), &net.spatial_gate()->bias()})
    for (float g : prm->grad) norm += static_cast<double>(g) * g;
  CHECK(norm == 0.0);
  CHECK(net.spatial_gate()->weight().value == w);
  CHECK(net.spatial_gate()->bias().value == bias);
  for (float v : mask.vec()) CHECK((v >= 0.f && v <= 1.f));
}

TEST_CASE("training is deterministic and resumable") {
  Fixture f("determinism");
  const auto c = small_config();
  TrainSchedule s = schedule(24, 5);
  s.checkpoint_every = 10;
  TrainOptions opt;
  opt.checkpoint_dir = f.dir.path / "ckpt";
  fs::create_directories(opt.checkpoint_dir);
  auto a = train(c, s, f.data, f.data, opt);
  auto b = train(c, s, f.data, f.data);
  REQUIRE(a.history.size() == 24);
  CHECK(snapshot(a.net.params()) == snapshot(b.net.params()));
  for (std::size_t i = 0; i < 24; ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].phase == phase_at(i));
    CHECK(a.history[i].dataset == dataset_at(i, 5, true));
  }
  CHECK(fs::exists(opt.checkpoint_dir / "ckpt_10.bin"));
  CHECK(fs::exists(opt.checkpoint_dir / "ckpt_20.bin"));

  TrainOptions resume;
  resume.resume_from = opt.checkpoint_dir / "ckpt_10.bin";
  auto r = train(c, s, f.data, f.data, resume);
  REQUIRE(r.history.size() == 14);
  for (std::size_t i = 0; i < 14; ++i) {
    CHECK(r.history[i].iteration == 10 + i);
    CHECK(r.history[i].loss == a.history[10 + i].loss);
    CHECK(r.history[i].subject_ids == a.history[10 + i].subject_ids);
  }
  CHECK(snapshot(r.net.params()) == snapshot(a.net.params()));

  TrainOptions partial;
  partial.stop_at = 6;
  CHECK(train(c, s, f.data, f.data, partial).history.size() == 6);
}

TEST_CASE("single-task training ignores the unpaired pool") {
  Fixture f("single");
  const auto r = train(small_config(false), schedule(12), f.data, f.data);
  CHECK(r.unpaired_ignored);
  for (const auto& h : r.history) {
    CHECK(h.dataset == Pairing::paired);
    CHECK(std::isnan(h.asl_ssim));
  }
  CHECK(r.counters.unpaired_drawn == 0);
}

TEST_CASE("missing pools raise EmptyPool") {
  Fixture f("empty", 2, 0);
  try {
    train(small_config(), schedule(4), f.data, f.data);
    FAIL("expected EmptyPool");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyPool);
  }
  CHECK_NOTHROW(train(small_config(false), schedule(4), f.data, nullptr));
}

TEST_CASE("block-opening fine steps draw and prime a new batch") {
  Fixture f("blocks");
  const auto r = train(small_config(), schedule(12), f.data, f.data);
  // Iteration 5 opens an unpaired block on a fine step; 10 reopens paired on a coarse step.
  CHECK(r.history[4].dataset == Pairing::paired);
  CHECK(r.history[5].dataset == Pairing::unpaired);
  CHECK(r.history[5].phase == Phase::fine);
  CHECK(r.history[6].subject_ids != r.history[5].subject_ids);
  CHECK(r.history[7].subject_ids == r.history[6].subject_ids);
  CHECK(r.history[1].subject_ids == r.history[0].subject_ids);
  CHECK(r.counters.paired_drawn == 4);    // iterations 0, 2, 4, 10
  CHECK(r.counters.unpaired_drawn == 3);  // iterations 5, 6, 8
}

TEST_CASE("desk run loss trends down") {
  Fixture f("desk", 4, 8, 32);
  ModelConfig c;
  c.base_channels = 8;
  TrainSchedule s = schedule(200, 2);
  s.batch_size = 4;
  const auto r = train(c, s, f.data, f.data);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += r.history[i].loss;
    last += r.history[150 + i].loss;
  }
  CHECK(last / 50 < first / 50);
}

TEST_CASE("parameter counting by group") {
  const auto net = build(small_config(), 0);
  std::size_t sum = 0;
  for (Group g : all_groups()) sum += count_parameters(net, g);
  CHECK(sum == count_parameters(net));
}
