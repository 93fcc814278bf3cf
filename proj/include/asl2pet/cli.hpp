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

// Command-line front end: generate, train, eval, ablate, plot.
//
// Option precedence is defaults < --config file < flags. Every command writes
// the configuration it actually ran with next to its outputs; feeding that file
// back through --config reproduces the run.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asl2pet/asl2pet.hpp"

namespace asl2pet::cli {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

inline constexpr const char* kConfigHelp = R"(Config file (--config, JSON). All sections and keys are optional:
  model:    use_t1, use_residual_attention, use_disentanglement_attention,
            multitask, dense_layout, base_channels, growth_channels (0 = half
            the level width), gate_reduction
  schedule: total_iterations, dataset_block, batch_size, lr, beta1, beta2,
            eps, checkpoint_every, seed, loader_workers
  corpus:   paired, unpaired, seed, height, width, levels, activations
  ablation: k, configs (list of tags such as "M+T1+RA+DA")
  paths:    manifest, unpaired_manifest, out, checkpoint, resume
--config also accepts a preset name: "single-task", "multitask" or a tag.
Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.)";

using Json = nlohmann::ordered_json;

/// Loads a config file, or expands a preset name into a model section.
inline Json load_config(const std::string& value) {
  if (value.empty()) return Json::object();
  auto preset = [](const ModelConfig& m) { return Json{{"model", to_json(m)}}; };
  if (value == "single-task") return preset(AblationConfig{Task::single, true, false, true}.model());
  if (value == "multitask" || value == "multi-task") return preset(reference_config().model());
  for (const auto& r : ablation_rows())
    if (r.tag() == value) return preset(r.model());
  const fs::path path(value);
  if (!fs::exists(path))
    fail(ErrorCode::ConfigError, "--config '" + value + "' is neither a file nor a preset name");
  Json j = Json::parse(read_file(path));
  if (!j.is_object()) fail(ErrorCode::ConfigError, value + ": config must be a JSON object");
  return j;
}

inline Json section(const Json& cfg, const char* key) {
  return cfg.contains(key) ? cfg.at(key) : Json::object();
}

template <typename V>
V pick(const CLI::Option* flag, const V& flag_value, const Json& sec, const char* key, V fallback) {
  if (flag && flag->count() > 0) return flag_value;
  if (sec.contains(key)) return sec.at(key).template get<V>();
  return fallback;
}

struct ModelFlags {
  bool t1 = false, ra = false, da = false, multitask = false;
  int base_channels = 0, growth_channels = 0;
  CLI::Option *o_t1 = nullptr, *o_ra = nullptr, *o_da = nullptr, *o_mt = nullptr;
  CLI::Option *o_base = nullptr, *o_growth = nullptr;

  void add(CLI::App* app, bool ablation_switches = true) {
    if (ablation_switches) {
      o_t1 = app->add_flag("--t1,!--no-t1", t1, "Feed the T1w slice as an extra input");
      o_ra = app->add_flag("--ra,!--no-ra", ra, "Residual attention (multitask only)");
      o_da = app->add_flag("--da,!--no-da", da, "Channel gates on the PET skip connections");
      o_mt = app->add_flag("--multitask,!--single-task", multitask,
                           "Train the ASL reconstruction branch on unpaired data");
    }
    o_base = app->add_option("--base-channels", base_channels, "Channels at the first level");
    o_growth = app->add_option("--growth-channels", growth_channels,
                               "Dense block growth rate (0 = half the level width)");
  }

  ModelConfig resolve(const Json& cfg) const {
    ModelConfig c = model_config_from_json(section(cfg, "model"));
    if (o_t1 && o_t1->count()) c.use_t1 = t1;
    if (o_ra && o_ra->count()) c.use_residual_attention = ra;
    if (o_da && o_da->count()) c.use_disentanglement_attention = da;
    if (o_mt && o_mt->count()) {
      c.multitask = multitask;
      // A bare --single-task drops residual attention unless asked for.
      if (!multitask && !(o_ra && o_ra->count())) c.use_residual_attention = false;
    }
    if (o_base->count()) c.base_channels = base_channels;
    if (o_growth->count()) c.growth_channels = growth_channels;
    c.validate();
    return c;
  }
};

struct ScheduleFlags {
  std::uint64_t iterations = 0, checkpoint_every = 0, seed = 0;
  int batch_size = 0, dataset_block = 0, workers = 0;
  double lr = 0.0;
  CLI::Option *o_it = nullptr, *o_ck = nullptr, *o_seed = nullptr, *o_bs = nullptr, *o_block = nullptr,
              *o_workers = nullptr, *o_lr = nullptr;

  void add(CLI::App* app) {
    o_it = app->add_option("--iterations", iterations, "Training iterations (even)");
    o_bs = app->add_option("--batch-size", batch_size, "Slices per batch");
    o_lr = app->add_option("--lr", lr, "Adam learning rate");
    o_block = app->add_option("--dataset-block", dataset_block,
                              "Iterations per paired/unpaired alternation block");
    o_ck = app->add_option("--checkpoint-every", checkpoint_every, "Checkpoint period (even; 0 = off)");
    o_workers = app->add_option("--workers", workers, "Data loader threads");
    o_seed = app->add_option("--seed", seed, "Seed for initialization, sampling and splits");
  }

  TrainSchedule resolve(const Json& cfg) const {
    TrainSchedule s = schedule_from_json(section(cfg, "schedule"));
    if (o_it->count()) s.total_iterations = iterations;
    if (o_bs->count()) s.batch_size = batch_size;
    if (o_lr->count()) s.optimizer.lr = lr;
    if (o_block->count()) s.dataset_block = dataset_block;
    if (o_ck->count()) s.checkpoint_every = checkpoint_every;
    if (o_workers->count()) s.loader_workers = workers;
    if (o_seed->count()) s.seed = seed;
    s.validate();
    return s;
  }
};

/// Path option that may also come from the config's "paths" section.
struct PathFlag {
  std::string value;
  CLI::Option* opt = nullptr;
  const char* key = "";

  void add(CLI::App* app, const std::string& name, const char* json_key, const std::string& help) {
    key = json_key;
    opt = app->add_option(name, value, help);
  }
  std::optional<fs::path> get(const Json& cfg) const {
    if (opt->count()) return fs::path(value);
    const Json p = section(cfg, "paths");
    if (p.contains(key)) return fs::path(p.at(key).get<std::string>());
    return std::nullopt;
  }
  fs::path require(const Json& cfg) const {
    auto p = get(cfg);
    if (!p) fail(ErrorCode::ConfigError, std::string("missing required path: ") + opt->get_name());
    return *p;
  }
};

inline std::string short_digest(const std::string& hex) { return hex.substr(0, 12); }

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorCode::IoError, "cannot create directory " + dir.string());
}

inline void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline std::shared_ptr<const DatasetHandle> load_handle(const fs::path& manifest) {
  return std::make_shared<const DatasetHandle>(load_manifest(manifest));
}

/// Network restored from a checkpoint, configured from the checkpoint header.
inline Network<float> load_network(const fs::path& checkpoint) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  Network<float> net = build<float>(info.config, 0);
  load_checkpoint(checkpoint, net);
  return net;
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  int paired = 0, unpaired = 0, height = 0, width = 0, levels = 0;
  std::uint64_t seed = 0;
  bool no_activations = false;
  CLI::Option *o_paired, *o_unpaired, *o_h, *o_w, *o_levels, *o_seed, *o_noact;
  PathFlag out;
};

inline int cmd_generate(const GenerateArgs& a, const Json& cfg, std::ostream& os) {
  const Json c = section(cfg, "corpus");
  const int paired = pick(a.o_paired, a.paired, c, "paired", 4);
  const int unpaired = pick(a.o_unpaired, a.unpaired, c, "unpaired", 8);
  const auto seed = pick<std::uint64_t>(a.o_seed, a.seed, c, "seed", 0);
  CorpusOptions opt;
  opt.height = pick(a.o_h, a.height, c, "height", opt.height);
  opt.width = pick(a.o_w, a.width, c, "width", opt.width);
  opt.levels = pick(a.o_levels, a.levels, c, "levels", opt.levels);
  opt.activations = a.o_noact->count() ? false : (c.contains("activations") ? c.at("activations").get<bool>() : true);
  const fs::path out = a.out.require(cfg);

  const Manifest m = generate_corpus(paired, unpaired, seed, out, opt);
  Json resolved{{"command", "generate"},
                {"corpus",
                 {{"paired", paired},
                  {"unpaired", unpaired},
                  {"seed", seed},
                  {"height", opt.height},
                  {"width", opt.width},
                  {"levels", opt.levels},
                  {"activations", opt.activations}}},
                {"paths", {{"out", out.string()}}},
                {"manifest_digest", manifest_digest(m)}};
  write_json(out / "generate.config.json", resolved);
  os << (out / "manifest.jsonl").string() << "\n";
  os << m.entries.size() << " subjects (" << m.paired_count() << " paired), digest "
     << manifest_digest(m) << "\n";
  return kOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  ModelFlags model;
  ScheduleFlags schedule;
  PathFlag manifest, unpaired_manifest, out, resume;
  std::uint64_t log_every = 100;
};

inline int cmd_train(const TrainArgs& a, const Json& cfg, std::ostream& os, std::ostream& es) {
  const ModelConfig config = a.model.resolve(cfg);
  const TrainSchedule schedule = a.schedule.resolve(cfg);
  const fs::path manifest = a.manifest.require(cfg);
  const auto unpaired_path = a.unpaired_manifest.get(cfg);
  const fs::path out = a.out.require(cfg);
  const auto resume = a.resume.get(cfg);

  auto paired = load_handle(manifest);
  std::shared_ptr<const DatasetHandle> unpaired;
  if (unpaired_path) unpaired = load_handle(*unpaired_path);
  else if (paired->unpaired_count() > 0) unpaired = paired;
  if (!config.multitask && unpaired && unpaired->unpaired_count() > 0)
    es << "warning: single-task configuration ignores unpaired data\n";

  ensure_dir(out);
  Json resolved{{"command", "train"}, {"model", to_json(config)}, {"schedule", to_json(schedule)}};
  Json paths{{"manifest", manifest.string()}, {"out", out.string()}};
  if (unpaired_path) paths["unpaired_manifest"] = unpaired_path->string();
  if (resume) paths["resume"] = resume->string();
  resolved["paths"] = paths;
  resolved["corpus_digest"] = paired->digest();
  if (unpaired) resolved["unpaired_digest"] = unpaired->digest();
  const std::string key = short_digest(
      digest_hex(resolved["model"].dump() + resolved["schedule"].dump() + paired->digest() +
                 (unpaired ? unpaired->digest() : std::string())));
  write_json(out / ("train_" + key + ".config.json"), resolved);

  TrainOptions opt;
  opt.checkpoint_dir = out / "checkpoints";
  if (schedule.checkpoint_every > 0) ensure_dir(opt.checkpoint_dir);
  opt.resume_from = resume;
  const std::uint64_t every = a.log_every;
  opt.on_step = [&](const StepRecord& r) {
    if (every > 0 && (r.iteration + 1) % every == 0) {
      char line[128];
      std::snprintf(line, sizeof line, "iter %llu %s %s loss %.5f\n",
                    static_cast<unsigned long long>(r.iteration + 1), to_string(r.phase),
                    to_string(r.dataset), r.loss);
      os << line << std::flush;
    }
  };
  TrainResult result = train(config, schedule, paired, config.multitask ? unpaired : nullptr, opt);

  std::string history;
  for (const auto& r : result.history) history += to_jsonl(r) + "\n";
  const fs::path history_path = out / ("history_" + key + ".jsonl");
  const fs::path model_path = out / ("model_" + key + ".bin");
  if (resume && fs::exists(history_path)) {
    // Continue the earlier record rather than replacing it.
    std::string prior = read_file(history_path);
    history = prior + history;
  }
  write_file_atomic(history_path, history);
  save_checkpoint(model_path, result.net, static_cast<const Adam<float>*>(nullptr), result.counters,
                  to_json(schedule));
  os << model_path.string() << "\n" << history_path.string() << "\n";
  return kOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  PathFlag checkpoint, manifest, out;
};

inline std::string metrics_line(const char* label, const Aggregates& agg) {
  char line[256];
  const auto& s = agg.at("all");
  std::snprintf(line, sizeof line, "%-10s SSIM %.4f+-%.4f  MSE %.5f+-%.5f  PSNR %.2f+-%.2f  (n=%zu)\n", label,
                s.ssim.mean, s.ssim.sd, s.mse.mean, s.mse.sd, s.psnr.mean, s.psnr.sd, s.ssim.count);
  return line;
}

inline int cmd_eval(const EvalArgs& a, const Json& cfg, std::ostream& os) {
  const fs::path ckpt = a.checkpoint.require(cfg);
  const fs::path manifest = a.manifest.require(cfg);
  const fs::path out = a.out.require(cfg);
  Network<float> net = load_network(ckpt);
  auto data = load_handle(manifest);
  const auto ids = ids_of(*data, Pairing::paired);
  if (ids.empty()) fail(ErrorCode::EmptyPool, manifest.string() + " has no paired subjects");

  const auto records = evaluate(net, *data, ids);
  const auto baseline = evaluate_identity_baseline(*data, ids);
  const std::string ckpt_digest = digest_hex(read_file(ckpt));
  ensure_dir(out);
  const std::string stem = "eval_" + short_digest(ckpt_digest) + "_" + short_digest(data->digest());

  std::string body = Json{{"type", "header"},
                          {"checkpoint_digest", ckpt_digest},
                          {"corpus_digest", data->digest()},
                          {"model", to_json(net.config())}}
                         .dump() +
                     "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    body += Json{{"type", "slice"},
                 {"subject_id", r.subject_id},
                 {"condition", condition_name(r.activated)},
                 {"ssim", r.ssim},
                 {"mse", r.mse},
                 {"psnr", std::isinf(r.psnr) ? Json("inf") : Json(r.psnr)},
                 {"baseline_ssim", baseline[i].ssim}}
                .dump() +
            "\n";
  }
  const auto agg = aggregate(records), base = aggregate(baseline);
  for (const auto& [cond, s] : agg)
    body += Json{{"type", "summary"},
                 {"condition", cond},
                 {"ssim_mean", s.ssim.mean},
                 {"ssim_sd", s.ssim.sd},
                 {"mse_mean", s.mse.mean},
                 {"mse_sd", s.mse.sd},
                 {"psnr_mean", s.psnr.mean},
                 {"psnr_sd", s.psnr.sd},
                 {"baseline_ssim_mean", base.at(cond).ssim.mean},
                 {"slices", s.ssim.count}}
                .dump() +
            "\n";
  write_file_atomic(out / (stem + ".jsonl"), body);
  write_json(out / (stem + ".config.json"),
             Json{{"command", "eval"},
                  {"paths", {{"checkpoint", ckpt.string()}, {"manifest", manifest.string()}, {"out", out.string()}}}});
  os << metrics_line("model", agg) << metrics_line("baseline", base);
  os << (out / (stem + ".jsonl")).string() << "\n";
  return kOk;
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  ModelFlags model;
  ScheduleFlags schedule;
  PathFlag manifest, out;
  int k = 3;
  std::vector<std::string> configs;
  CLI::Option *o_k = nullptr, *o_configs = nullptr;
};

inline int cmd_ablate(const AblateArgs& a, const Json& cfg, std::ostream& os) {
  ModelConfig base = a.model.resolve(cfg);
  const TrainSchedule schedule = a.schedule.resolve(cfg);
  const Json ab = section(cfg, "ablation");
  const int k = pick(a.o_k, a.k, ab, "k", 3);
  std::vector<std::string> tags = pick(a.o_configs, a.configs, ab, "configs", std::vector<std::string>{});
  std::vector<AblationConfig> configs;
  if (tags.empty())
    configs = ablation_rows();
  else
    for (const auto& t : tags) configs.push_back(ablation_from_tag(t));
  // Keep table order regardless of how the subset was listed.
  std::vector<AblationConfig> ordered;
  for (const auto& r : ablation_rows())
    if (std::find(configs.begin(), configs.end(), r) != configs.end()) ordered.push_back(r);

  const fs::path manifest = a.manifest.require(cfg);
  const fs::path out = a.out.require(cfg);
  auto corpus = load_handle(manifest);
  ensure_dir(out);

  Json tag_list = Json::array();
  for (const auto& c : ordered) tag_list.push_back(c.tag());
  Json base_json = to_json(base);
  for (const char* field : {"use_t1", "use_residual_attention", "use_disentanglement_attention", "multitask"})
    base_json.erase(field);
  const Json experiment{{"model", base_json},
                        {"schedule", to_json(schedule)},
                        {"ablation", {{"k", k}, {"configs", tag_list}}}};

  ReportInputs in;
  in.corpus_digest = corpus->digest();
  in.k = k;
  in.resolved_config = experiment;
  for (const auto& c : ordered) {
    CrossValidationOptions cv;
    cv.base = base;
    cv.seed = schedule.seed;
    cv.on_fold = [&](const FoldResult& f) {
      char line[160];
      std::snprintf(line, sizeof line, "%-12s fold %d  SSIM %.4f\n", c.tag().c_str(), f.fold_id,
                    f.aggregates.at("all").ssim.mean);
      os << line << std::flush;
    };
    AblationRun run;
    run.config = c;
    run.folds = crossvalidate(corpus, k, c, schedule, cv);
    run.parameter_count = count_parameters(build<float>(c.model(base), 0));
    in.runs.push_back(std::move(run));
  }
  const ReportPaths paths = report(in, out);
  Json resolved = experiment;
  resolved["command"] = "ablate";
  resolved["paths"] = {{"manifest", manifest.string()}, {"out", out.string()}};
  resolved["corpus_digest"] = corpus->digest();
  write_json(fs::path(paths.results).replace_extension("").replace_extension(".config.json"), resolved);
  os << read_file(paths.table_text);
  os << paths.results.string() << "\n" << paths.table_text.string() << "\n" << paths.table_csv.string() << "\n";
  os << "report digest " << paths.digest << "\n";
  return kOk;
}

// --- plot -------------------------------------------------------------------

struct PlotArgs {
  PathFlag checkpoint, manifest, out;
  std::vector<int> subjects;
};

/// Binary PGM of `panels` laid side by side, each scaled from [0, 1].
inline std::string pgm_strip(const std::vector<std::vector<float>>& panels, int h, int w) {
  const int gap = 2, total_w = static_cast<int>(panels.size()) * (w + gap) - gap;
  std::string img = "P5\n" + std::to_string(total_w) + " " + std::to_string(h) + "\n255\n";
  for (int y = 0; y < h; ++y)
    for (std::size_t p = 0; p < panels.size(); ++p) {
      for (int x = 0; x < w; ++x) {
        const float v = panels[p].empty() ? 0.0f : panels[p][static_cast<std::size_t>(y) * w + x];
        img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
      }
      if (p + 1 < panels.size()) img.append(gap, static_cast<char>(255));
    }
  return img;
}

inline int cmd_plot(const PlotArgs& a, const Json& cfg, std::ostream& os) {
  const fs::path ckpt = a.checkpoint.require(cfg);
  const fs::path manifest = a.manifest.require(cfg);
  const fs::path out = a.out.require(cfg);
  Network<float> net = load_network(ckpt);
  auto data = load_handle(manifest);
  std::vector<int> ids = a.subjects.empty() ? ids_of(*data, Pairing::paired) : a.subjects;
  ensure_dir(out);
  for (int id : ids) {
    const Subject& s = data->by_id(id);
    const auto pos = static_cast<std::size_t>(&s - data->subjects().data());
    const Batch b = make_batch(*data, {pos}, true, false);
    const Tensor<float> pred = predict(net, b);
    std::vector<float> p(pred.vec().begin(), pred.vec().end()), gt, err;
    if (s.pet) {
      gt = s.pet->pixels;
      err.resize(gt.size());
      for (std::size_t i = 0; i < gt.size(); ++i) err[i] = std::abs(p[i] - gt[i]);
    }
    char name[64];
    std::snprintf(name, sizeof name, "panel_sub%04d.pgm", id);
    write_file_atomic(out / name, pgm_strip({s.asl.pixels, s.t1.pixels, gt, p, err}, s.asl.height, s.asl.width));
    os << (out / name).string() << "\n";
  }
  write_json(out / "plot.config.json",
             Json{{"command", "plot"},
                  {"subjects", ids},
                  {"panels", {"asl", "t1", "pet_ground_truth", "pet_prediction", "abs_error"}},
                  {"paths", {{"checkpoint", ckpt.string()}, {"manifest", manifest.string()}, {"out", out.string()}}}});
  return kOk;
}

// --- entry point ------------------------------------------------------------

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidSpec:
    case ErrorCode::InvalidGrid:
      return kUsage;
    default:
      return is_data_error(e.code()) ? kData : kRuntime;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"asl2pet: ASL/T1w to PET translation on synthetic phantoms", "asl2pet"};
  app.footer(kConfigHelp);
  app.require_subcommand(1);
  std::string config_arg;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_arg, "JSON config file or preset name (see below)");
    sub->footer(kConfigHelp);
  };

  GenerateArgs g;
  auto* gen = app.add_subcommand("generate", "Render a synthetic phantom corpus and its manifest");
  add_config(gen);
  g.o_paired = gen->add_option("--paired", g.paired, "Subjects with ASL, T1w and PET (default 4)");
  g.o_unpaired = gen->add_option("--unpaired", g.unpaired, "Subjects with ASL and T1w only (default 8)");
  g.o_seed = gen->add_option("--seed", g.seed, "Corpus seed");
  g.o_h = gen->add_option("--height", g.height, "Slice height (default 64)");
  g.o_w = gen->add_option("--width", g.width, "Slice width (default 64)");
  g.o_levels = gen->add_option("--levels", g.levels, "Network depth the grid must divide into (default 3)");
  g.o_noact = gen->add_flag("--no-activations", g.no_activations, "Render every subject at rest");
  g.out.add(gen, "--out", "out", "Output directory");

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Train one network and write a checkpoint and loss history");
  add_config(tr);
  t.model.add(tr);
  t.schedule.add(tr);
  t.manifest.add(tr, "--manifest", "manifest", "Corpus manifest (paired, optionally also unpaired)");
  t.unpaired_manifest.add(tr, "--unpaired-manifest", "unpaired_manifest", "Separate manifest of unpaired subjects");
  t.out.add(tr, "--out", "out", "Output directory");
  t.resume.add(tr, "--resume", "resume", "Checkpoint to resume from");
  tr->add_option("--log-every", t.log_every, "Progress line period in iterations (0 = quiet)");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a manifest's paired subjects");
  add_config(ev);
  e.checkpoint.add(ev, "--checkpoint", "checkpoint", "Model checkpoint");
  e.manifest.add(ev, "--manifest", "manifest", "Corpus manifest");
  e.out.add(ev, "--out", "out", "Output directory");

  AblateArgs ab;
  auto* abl = app.add_subcommand("ablate", "Cross-validate the ablation configurations and write the report");
  add_config(abl);
  ab.model.add(abl, false);
  ab.schedule.add(abl);
  ab.manifest.add(abl, "--manifest", "manifest", "Corpus manifest");
  ab.out.add(abl, "--out", "out", "Output directory");
  ab.o_k = abl->add_option("--k", ab.k, "Number of folds (default 3)");
  ab.o_configs = abl->add_option("--configs", ab.configs, "Subset of configuration tags (default all seven)")
                     ->delimiter(',');

  PlotArgs p;
  auto* pl = app.add_subcommand("plot", "Write ASL | T1w | PET | prediction | error panels as PGM");
  add_config(pl);
  p.checkpoint.add(pl, "--checkpoint", "checkpoint", "Model checkpoint");
  p.manifest.add(pl, "--manifest", "manifest", "Corpus manifest");
  p.out.add(pl, "--out", "out", "Output directory");
  pl->add_option("--subjects", p.subjects, "Subject ids (default every paired subject)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err, os, es);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const Json cfg = load_config(config_arg);
    if (gen->parsed()) return cmd_generate(g, cfg, os);
    if (tr->parsed()) return cmd_train(t, cfg, os, es);
    if (ev->parsed()) return cmd_eval(e, cfg, os);
    if (abl->parsed()) return cmd_ablate(ab, cfg, os);
    if (pl->parsed()) return cmd_plot(p, cfg, os);
    return kUsage;
  } catch (const Error& err) {
    es << "error: " << err.what() << "\n";
    return exit_code_for(err);
  } catch (const nlohmann::json::exception& err) {
    es << "error: config: " << err.what() << "\n";
    return kUsage;
  } catch (const std::exception& err) {
    es << "error: " << err.what() << "\n";
    return kRuntime;
  }
}

}  // namespace asl2pet::cli
