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

// Multitask U-shaped network: one shared encoder E, a PET decoder D_P fed by
// the bottleneck and by skip connections from every encoder level, and an
// ASL decoder D_A fed by the bottleneck only. Optional channel gates sit on
// the skip connections; an optional spatial gate turns the ASL reconstruction
// residual into a mask that is fed back as extra input channels.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl2pet/common.hpp"
#include "asl2pet/datasets.hpp"
#include "asl2pet/layers.hpp"
#include "asl2pet/tensor.hpp"

namespace asl2pet {

struct ModelConfig {
  bool use_t1 = true;
  bool use_residual_attention = true;
  bool use_disentanglement_attention = true;
  bool multitask = true;
  std::vector<int> dense_layout{1, 3, 5, 3, 1};
  int base_channels = 16;
  /// Channels added per dense layer at level 0, doubling per level like the
  /// widths. 0 selects half the level width.
  int growth_channels = 0;
  int gate_reduction = 4;

  int levels() const { return static_cast<int>(dense_layout.size() + 1) / 2; }
  int width(int level) const { return base_channels << level; }
  int growth(int level) const {
    return growth_channels > 0 ? growth_channels << level : std::max(1, width(level) / 2);
  }
  int input_channels() const { return (1 + use_t1) * (1 + use_residual_attention); }

  void validate() const {
    if (dense_layout.empty() || dense_layout.size() % 2 == 0)
      fail(ErrorCode::ConfigError, "dense_layout must have odd length");
    for (int d : dense_layout)
      if (d < 1) fail(ErrorCode::ConfigError, "dense_layout entries must be >= 1");
    if (base_channels < 1) fail(ErrorCode::ConfigError, "base_channels must be >= 1");
    if (gate_reduction < 1) fail(ErrorCode::ConfigError, "gate_reduction must be >= 1");
    if (!multitask && use_residual_attention)
      fail(ErrorCode::ConfigError,
           "residual attention needs the ASL reconstruction, which a single-task network lacks");
  }

  /// Table-style tag, e.g. "M+T1+RA+DA".
  std::string tag() const {
    std::string s = multitask ? "M" : "S";
    s += use_t1 ? "+T1" : "-T1";
    s += use_residual_attention ? "+RA" : "-RA";
    s += use_disentanglement_attention ? "+DA" : "-DA";
    return s;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"use_t1", c.use_t1},
          {"use_residual_attention", c.use_residual_attention},
          {"use_disentanglement_attention", c.use_disentanglement_attention},
          {"multitask", c.multitask},
          {"dense_layout", c.dense_layout},
          {"base_channels", c.base_channels},
          {"growth_channels", c.growth_channels},
          {"gate_reduction", c.gate_reduction}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  if (j.contains("use_t1")) c.use_t1 = j["use_t1"].get<bool>();
  if (j.contains("use_residual_attention"))
    c.use_residual_attention = j["use_residual_attention"].get<bool>();
  if (j.contains("use_disentanglement_attention"))
    c.use_disentanglement_attention = j["use_disentanglement_attention"].get<bool>();
  if (j.contains("multitask")) c.multitask = j["multitask"].get<bool>();
  if (j.contains("dense_layout")) c.dense_layout = j["dense_layout"].get<std::vector<int>>();
  if (j.contains("base_channels")) c.base_channels = j["base_channels"].get<int>();
  if (j.contains("growth_channels")) c.growth_channels = j["growth_channels"].get<int>();
  if (j.contains("gate_reduction")) c.gate_reduction = j["gate_reduction"].get<int>();
  return c;
}

inline std::string config_hash(const ModelConfig& c) { return digest_hex(to_json(c).dump()); }

/// A connection into a decoder. `from` is an encoder stage, `to` a decoder stage.
struct Edge {
  std::string from;
  std::string to;
  bool skip = false;   // encoder level -> decoder level (bypasses the bottleneck)
  bool gated = false;  // passes through a channel gate
};

struct Topology {
  std::vector<Edge> edges;

  /// Number of distinct encoder stages feeding the named decoder.
  int input_arity(const std::string& decoder) const {
    std::vector<std::string> sources;
    for (const auto& e : edges)
      if (e.to.rfind(decoder, 0) == 0 &&
          std::find(sources.begin(), sources.end(), e.from) == sources.end())
        sources.push_back(e.from);
    return static_cast<int>(sources.size());
  }
  int skip_count(const std::string& decoder) const {
    int n = 0;
    for (const auto& e : edges) n += e.skip && e.to.rfind(decoder, 0) == 0;
    return n;
  }
};

template <typename T>
class Network {
 public:
  struct Outputs {
    std::optional<Tensor<T>> pet;
    std::optional<Tensor<T>> asl;
  };

  Network(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    parts_ = std::make_unique<Parts>();
    build(seed);
  }

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  const Topology& topology() const { return topology_; }
  const std::vector<Param<T>*>& params() const { return parts_->registry.params; }
  const std::vector<Buffer<T>>& buffers() const { return parts_->registry.buffers; }

  std::vector<Param<T>*> params(Group g) const {
    std::vector<Param<T>*> out;
    for (auto* p : params())
      if (p->group == g) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += p->size();
    return n;
  }
  std::size_t parameter_count(Group g) const {
    std::size_t n = 0;
    for (const auto* p : params())
      if (p->group == g) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  SpatialGate<T>* spatial_gate() { return parts_->spatial ? parts_->spatial.get() : nullptr; }
  /// With residual attention, batch norm keeps separate running statistics
  /// for uniform-mask (coarse) and residual-mask (fine) inputs.
  void use_fine_statistics(bool fine) {
    parts_->stat_slot = fine && config_.use_residual_attention ? 1 : 0;
  }

  ChannelGate<T>* channel_gate(int level) {
    return parts_->gates.empty() ? nullptr : parts_->gates.at(level).get();
  }

  /// Runs the encoder and the requested decoders on an assembled input of
  /// config().input_channels() channels.
  Outputs forward(const Tensor<T>& input, BnMode mode, bool run_pet = true, bool run_asl = true) {
    if (input.c() != config_.input_channels())
      fail(ErrorCode::ShapeMismatch, "network expects " + std::to_string(config_.input_channels()) +
                                         " input channels, got " + std::to_string(input.c()));
    const int div = 1 << (levels() - 1);
    if (input.h() % div != 0 || input.w() % div != 0)
      fail(ErrorCode::ShapeMismatch, "input " + input.shape().str() + " not divisible by " +
                                         std::to_string(div));
    auto& P = *parts_;
    input_shape_ = input.shape();
    ran_pet_ = run_pet;
    ran_asl_ = run_asl && config_.multitask;

    // Encoder.
    P.skips.resize(levels() - 1);
    Tensor<T> cur = input;
    for (int l = 0; l + 1 < levels(); ++l) {
      P.skips[l] = P.enc[l]->forward(cur, mode);
      cur = P.pools[l].forward(P.skips[l]);
    }
    P.bottleneck_out = P.bottleneck->forward(cur, mode);

    Outputs out;
    if (ran_pet_) {
      Tensor<T> x = P.bottleneck_out;
      for (int l = levels() - 2; l >= 0; --l) {
        Tensor<T> up = P.pet_up[l]->forward(x, mode);
        const Tensor<T>& skip =
            P.gates.empty() ? P.skips[l] : (P.gated[l] = P.gates[l]->forward(P.skips[l]));
        Tensor<T> cat(up.n(), up.c() + skip.c(), up.h(), up.w());
        copy_channels(up, cat, 0);
        copy_channels(skip, cat, up.c());
        x = P.pet_dense[l]->forward(cat, mode);
      }
      P.pet_feat = std::move(x);
      out.pet = P.pet_head->forward(P.pet_feat);
    }
    if (ran_asl_) {
      Tensor<T> x = P.bottleneck_out;
      for (int l = levels() - 2; l >= 0; --l) {
        Tensor<T> up = P.asl_up[l]->forward(x, mode);
        x = P.asl_dense[l]->forward(up, mode);
      }
      P.asl_feat = std::move(x);
      out.asl = P.asl_head->forward(P.asl_feat);
    }
    return out;
  }

  /// Backpropagates output gradients from the last forward(); accumulates
  /// parameter gradients and returns the gradient w.r.t. the assembled input.
  /// Decoders whose gradient is null receive nothing.
  Tensor<T> backward(const Tensor<T>* d_pet, const Tensor<T>* d_asl) {
    auto& P = *parts_;
    const int L = levels();
    std::vector<Tensor<T>> d_skip(L - 1);
    for (int l = 0; l + 1 < L; ++l) d_skip[l] = Tensor<T>(P.skips[l].shape());
    Tensor<T> d_bottleneck(P.bottleneck_out.shape());

    if (d_pet && ran_pet_) {
      Tensor<T> d = P.pet_head->backward(*d_pet, P.pet_feat.shape());
      for (int l = 0; l + 1 < L; ++l) {
        Tensor<T> dcat = P.pet_dense[l]->backward(d);
        const int wu = config_.width(l);
        Tensor<T> du = slice_channels(dcat, 0, wu);
        Tensor<T> ds = slice_channels(dcat, wu, dcat.c() - wu);
        if (!P.gates.empty()) ds = P.gates[l]->backward(ds);
        add_channels(ds, 0, d_skip[l]);
        d = P.pet_up[l]->backward(du);
      }
      add_channels(d, 0, d_bottleneck);
    }
    if (d_asl && ran_asl_) {
      Tensor<T> d = P.asl_head->backward(*d_asl, P.asl_feat.shape());
      for (int l = 0; l + 1 < L; ++l) {
        d = P.asl_dense[l]->backward(d);
        d = P.asl_up[l]->backward(d);
      }
      add_channels(d, 0, d_bottleneck);
    }

    Tensor<T> d = P.bottleneck->backward(d_bottleneck);
    for (int l = L - 2; l >= 0; --l) {
      Tensor<T> dpool = P.pools[l].backward(d);
      add_channels(dpool, 0, d_skip[l]);
      d = P.enc[l]->backward(d_skip[l]);
    }
    return d;
  }

  int levels() const { return config_.levels(); }

 private:
  struct Parts {
    Registry<T> registry;
    std::vector<std::unique_ptr<DenseBlock<T>>> enc;
    std::vector<MaxPool2<T>> pools;
    std::unique_ptr<DenseBlock<T>> bottleneck;
    std::vector<std::unique_ptr<UpConv<T>>> pet_up, asl_up;
    std::vector<std::unique_ptr<DenseBlock<T>>> pet_dense, asl_dense;
    std::unique_ptr<OutputHead<T>> pet_head, asl_head;
    std::vector<std::unique_ptr<ChannelGate<T>>> gates;
    std::unique_ptr<SpatialGate<T>> spatial;
    int stat_slot = 0;  // 0 = uniform-mask statistics, 1 = residual-mask statistics

    std::vector<Tensor<T>> skips, gated;
    Tensor<T> bottleneck_out, pet_feat, asl_feat;
  };

  void build(std::uint64_t seed) {
    auto& P = *parts_;
    const ModelConfig& c = config_;
    const int L = levels();
    const int n = static_cast<int>(c.dense_layout.size());
    auto& reg = P.registry;
    reg.stat_slots = c.use_residual_attention ? 2 : 1;
    reg.stat_slot = &P.stat_slot;
    Rng rng(seed);

    int cin = c.input_channels();
    for (int l = 0; l + 1 < L; ++l) {
      P.enc.push_back(std::make_unique<DenseBlock<T>>(cin, c.growth(l), c.dense_layout[l], c.width(l)));
      P.enc.back()->init(rng);
      P.enc.back()->register_params(reg, "encoder.level" + std::to_string(l), Group::encoder);
      cin = c.width(l);
    }
    P.pools.resize(L - 1);
    P.bottleneck =
        std::make_unique<DenseBlock<T>>(cin, c.growth(L - 1), c.dense_layout[L - 1], c.width(L - 1));
    P.bottleneck->init(rng);
    P.bottleneck->register_params(reg, "encoder.bottleneck", Group::encoder);

    P.pet_up.resize(L - 1);
    P.pet_dense.resize(L - 1);
    for (int l = L - 2; l >= 0; --l) {
      const std::string name = "pet_decoder.level" + std::to_string(l);
      P.pet_up[l] = std::make_unique<UpConv<T>>(c.width(l + 1), c.width(l));
      P.pet_up[l]->init(rng);
      P.pet_up[l]->register_params(reg, name + ".up", Group::pet_decoder);
      P.pet_dense[l] = std::make_unique<DenseBlock<T>>(2 * c.width(l), c.growth(l),
                                                       c.dense_layout[n - 1 - l], c.width(l));
      P.pet_dense[l]->init(rng);
      P.pet_dense[l]->register_params(reg, name + ".dense", Group::pet_decoder);
      const std::string from = "encoder.level" + std::to_string(l);
      topology_.edges.push_back({from, name, true, c.use_disentanglement_attention});
    }
    topology_.edges.push_back({"encoder.bottleneck", "pet_decoder.level" + std::to_string(L - 2), false, false});
    P.pet_head = std::make_unique<OutputHead<T>>(c.width(0));
    P.pet_head->init(rng);
    P.pet_head->register_params(reg, "pet_decoder.head", Group::pet_decoder);

    if (c.multitask) {
      P.asl_up.resize(L - 1);
      P.asl_dense.resize(L - 1);
      for (int l = L - 2; l >= 0; --l) {
        const std::string name = "asl_decoder.level" + std::to_string(l);
        P.asl_up[l] = std::make_unique<UpConv<T>>(c.width(l + 1), c.width(l));
        P.asl_up[l]->init(rng);
        P.asl_up[l]->register_params(reg, name + ".up", Group::asl_decoder);
        P.asl_dense[l] = std::make_unique<DenseBlock<T>>(c.width(l), c.growth(l),
                                                         c.dense_layout[n - 1 - l], c.width(l));
        P.asl_dense[l]->init(rng);
        P.asl_dense[l]->register_params(reg, name + ".dense", Group::asl_decoder);
      }
      topology_.edges.push_back(
          {"encoder.bottleneck", "asl_decoder.level" + std::to_string(L - 2), false, false});
      P.asl_head = std::make_unique<OutputHead<T>>(c.width(0));
      P.asl_head->init(rng);
      P.asl_head->register_params(reg, "asl_decoder.head", Group::asl_decoder);
    }

    if (c.use_disentanglement_attention) {
      for (int l = 0; l + 1 < L; ++l) {
        P.gates.push_back(std::make_unique<ChannelGate<T>>(c.width(l), c.gate_reduction));
        P.gates.back()->init(rng);
        P.gates.back()->register_params(reg, "gates.skip" + std::to_string(l), Group::gates);
      }
      P.gated.resize(L - 1);
    }
    if (c.use_residual_attention) {
      P.spatial = std::make_unique<SpatialGate<T>>();
      P.spatial->register_params(reg, "gates.residual", Group::gates);
    }
  }

  ModelConfig config_;
  std::unique_ptr<Parts> parts_;
  Topology topology_;
  Shape input_shape_{};
  bool ran_pet_ = false, ran_asl_ = false;
};

template <typename T = float>
Network<T> build(const ModelConfig& config, std::uint64_t seed) {
  return Network<T>(config, seed);
}

/// Closed-form parameter count of the channel gates a config adds.
inline std::size_t gate_parameter_count(const ModelConfig& c) {
  if (!c.use_disentanglement_attention) return 0;
  std::size_t n = 0;
  for (int l = 0; l + 1 < c.levels(); ++l) n += ChannelGate<float>::parameter_count(c.width(l), c.gate_reduction);
  return n;
}

/// Stacks the network input: [a, a*M] and, with T1, [t, t*M] when residual
/// attention is on; [a] / [a, t] otherwise (the mask is then ignored).
template <typename T>
Tensor<T> assemble_input(const ModelConfig& config, const Tensor<T>& asl, const Tensor<T>* t1,
                         const Tensor<T>* mask) {
  if (asl.c() != 1) fail(ErrorCode::ShapeMismatch, "ASL batch must have one channel");
  if (config.use_t1) {
    if (!t1) fail(ErrorCode::ConfigError, "configuration uses T1 but the batch has none");
    require_same_shape(asl.shape(), t1->shape(), "T1 batch");
  }
  const bool ra = config.use_residual_attention;
  if (ra && mask) {
    require_same_shape(asl.shape(), mask->shape(), "attention mask");
    for (T v : mask->vec())
      if (!(v >= T(0) && v <= T(1))) fail(ErrorCode::InvalidSpec, "attention mask outside [0, 1]");
  }
  Tensor<T> x(asl.n(), config.input_channels(), asl.h(), asl.w());
  const std::size_t hw = asl.shape().plane();
  for (int n = 0; n < asl.n(); ++n) {
    int c = 0;
    auto put = [&](const Tensor<T>& src) {
      const T* s = src.plane(n, 0);
      std::copy(s, s + hw, x.plane(n, c++));
      if (ra) {
        T* d = x.plane(n, c++);
        if (mask) {
          const T* m = mask->plane(n, 0);
          for (std::size_t i = 0; i < hw; ++i) d[i] = s[i] * m[i];
        } else {
          std::copy(s, s + hw, d);
        }
      }
    };
    put(asl);
    if (config.use_t1) put(*t1);
  }
  return x;
}

template <typename T>
struct ForwardResult {
  std::optional<Tensor<T>> pet_pred;
  std::optional<Tensor<T>> asl_recon;
  std::optional<Tensor<T>> residual_mask;
};

/// Residual attention mask from an ASL input and its reconstruction.
template <typename T>
Tensor<T> residual_attention(SpatialGate<T>& gate, const Tensor<T>& asl_in, const Tensor<T>& asl_recon) {
  return gate.forward(asl_in, asl_recon);
}

/// Applies a channel gate to a feature stack.
template <typename T>
Tensor<T> disentanglement_gate(ChannelGate<T>& gate, const Tensor<T>& features) {
  if (features.c() != gate.channels())
    fail(ErrorCode::ShapeMismatch, "gate expects " + std::to_string(gate.channels()) + " channels");
  return gate.forward(features);
}

/// One forward pass on a batch with an explicit mask (null = uniform ones).
/// An explicit mask selects the fine-step batch-norm statistics.
/// With residual attention, the mask computed from this pass's ASL
/// reconstruction is attached to the result.
template <typename T>
ForwardResult<T> forward(Network<T>& net, const Batch& batch, const Tensor<T>* mask,
                         BnMode mode = BnMode::eval, bool run_pet = true) {
  const ModelConfig& c = net.config();
  const Tensor<T> asl = tensor_cast<T>(batch.asl);
  std::optional<Tensor<T>> t1;
  if (c.use_t1) {
    if (!batch.t1) fail(ErrorCode::ConfigError, "configuration uses T1 but the batch has none");
    t1 = tensor_cast<T>(*batch.t1);
  }
  const Tensor<T> x = assemble_input(c, asl, t1 ? &*t1 : nullptr, mask);
  net.use_fine_statistics(mask != nullptr);
  auto out = net.forward(x, mode, run_pet, true);
  ForwardResult<T> r;
  r.pet_pred = std::move(out.pet);
  r.asl_recon = std::move(out.asl);
  if (c.use_residual_attention && r.asl_recon)
    r.residual_mask = residual_attention(*net.spatial_gate(), asl, *r.asl_recon);
  return r;
}

/// Inference. With residual attention this mirrors training: a uniform-mask
/// pass produces the ASL reconstruction, whose residual mask drives a second
/// pass that yields the PET prediction. Each pass normalizes with the running
/// statistics of the matching training phase.
template <typename T>
Tensor<T> predict(Network<T>& net, const Batch& batch) {
  auto first = forward(net, batch, static_cast<const Tensor<T>*>(nullptr), BnMode::eval);
  if (!first.residual_mask) return std::move(*first.pet_pred);
  auto second = forward(net, batch, &*first.residual_mask, BnMode::eval);
  return std::move(*second.pet_pred);
}

}  // namespace asl2pet
