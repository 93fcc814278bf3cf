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

// Cross-validated ablation protocol.
//
// Paired subjects are split into k disjoint validation folds by a seeded
// permutation; unpaired subjects are always training data. One network is
// trained per fold and scored on the fold's held-out paired subjects with
// SSIM (per slice, then averaged), MSE and PSNR. Results are aggregated per
// condition: activated (hotspot, reported alongside "hypercapnia"), resting
// ("normocapnia") and all.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asl2pet/anova.hpp"
#include "asl2pet/common.hpp"
#include "asl2pet/datasets.hpp"
#include "asl2pet/formats.hpp"
#include "asl2pet/losses.hpp"
#include "asl2pet/model.hpp"
#include "asl2pet/trainer.hpp"

namespace asl2pet {

enum class Task { single, multi };

struct AblationConfig {
  Task task = Task::multi;
  bool t1 = true;
  bool ra = true;
  bool da = true;

  bool operator==(const AblationConfig&) const = default;

  ModelConfig model(ModelConfig base = {}) const {
    base.multitask = task == Task::multi;
    base.use_t1 = t1;
    base.use_residual_attention = ra;
    base.use_disentanglement_attention = da;
    return base;
  }
  std::string tag() const { return model().tag(); }
};

/// The seven configurations of the ablation table, in table order.
inline const std::vector<AblationConfig>& ablation_rows() {
  static const std::vector<AblationConfig> rows{
      {Task::single, false, false, false}, {Task::single, true, false, false},
      {Task::single, true, false, true},   {Task::multi, false, false, false},
      {Task::multi, true, false, false},   {Task::multi, true, true, false},
      {Task::multi, true, true, true},
  };
  return rows;
}

inline const AblationConfig& reference_config() { return ablation_rows().back(); }

inline bool is_legal(const AblationConfig& c) {
  for (const auto& r : ablation_rows())
    if (r == c) return true;
  return false;
}

inline AblationConfig ablation_from_tag(const std::string& tag) {
  for (const auto& r : ablation_rows())
    if (r.tag() == tag) return r;
  fail(ErrorCode::ConfigError, "unknown ablation configuration '" + tag + "'");
}

inline void validate(const AblationConfig& c) {
  if (!is_legal(c)) fail(ErrorCode::ConfigError, "configuration " + c.tag() + " is not an ablation row");
}

// ---------------------------------------------------------------------------

struct SliceRecord {
  int subject_id = 0;
  bool activated = false;
  double ssim = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
};

inline const char* condition_name(bool activated) { return activated ? "activated" : "resting"; }
inline const char* condition_alias(bool activated) { return activated ? "hypercapnia" : "normocapnia"; }

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t count = 0;
};

struct ConditionSummary {
  MetricSummary ssim, mse, psnr;
};

/// Keys "activated", "resting", "all".
using Aggregates = std::map<std::string, ConditionSummary>;

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(v.size() - 1));
  }
  return s;
}

inline Aggregates aggregate(const std::vector<SliceRecord>& records) {
  Aggregates out;
  for (const char* cond : {"activated", "resting", "all"}) {
    std::vector<double> a, b, c;
    for (const auto& r : records) {
      if (std::string(cond) != "all" && std::string(cond) != condition_name(r.activated)) continue;
      a.push_back(r.ssim);
      b.push_back(r.mse);
      c.push_back(r.psnr);
    }
    out[cond] = {summarize(a), summarize(b), summarize(c)};
  }
  return out;
}

struct FoldResult {
  int fold_id = 0;
  std::vector<int> validation_ids;
  std::vector<int> train_ids;
  std::vector<SliceRecord> records;
  Aggregates aggregates;
};

/// Disjoint validation folds over `ids`; fold sizes differ by at most one.
inline std::vector<std::vector<int>> make_folds(const std::vector<int>& ids, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::ConfigError, "cross-validation needs k >= 2");
  if (ids.size() < static_cast<std::size_t>(k))
    fail(ErrorCode::TooFewSubjects, std::to_string(ids.size()) + " paired subjects for " +
                                        std::to_string(k) + " folds");
  Rng rng(derive_seed(seed, 0x666f6c64));
  const auto perm = permutation(ids.size(), rng);
  std::vector<std::vector<int>> folds(k);
  const std::size_t base = ids.size() / k, extra = ids.size() % k;
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) folds[f].push_back(ids[perm[pos++]]);
    std::sort(folds[f].begin(), folds[f].end());
  }
  return folds;
}

/// Scores PET predictions for the listed paired subjects.
inline std::vector<SliceRecord> evaluate(Network<float>& net, const DatasetHandle& data,
                                         const std::vector<int>& ids) {
  std::vector<SliceRecord> out;
  for (int id : ids) {
    const Subject& s = data.by_id(id);
    if (!s.pet) fail(ErrorCode::EmptyPool, "subject " + std::to_string(id) + " has no PET");
    Batch b;
    b.asl = Tensor<float>(1, 1, s.asl.height, s.asl.width);
    stack_into(s.asl, b.asl, 0);
    b.t1 = Tensor<float>(1, 1, s.t1.height, s.t1.width);
    stack_into(s.t1, *b.t1, 0);
    b.subject_ids = {id};
    const Tensor<float> pred = predict(net, b);
    Slice p = *s.pet;
    p.pixels.assign(pred.vec().begin(), pred.vec().end());
    const double m = mse(p, *s.pet);
    out.push_back({id, s.activated, ssim(p, *s.pet), m, psnr_from_mse(m)});
  }
  return out;
}

/// The no-learning reference: the normalized ASL input scored as a PET estimate.
inline std::vector<SliceRecord> evaluate_identity_baseline(const DatasetHandle& data,
                                                           const std::vector<int>& ids) {
  std::vector<SliceRecord> out;
  for (int id : ids) {
    const Subject& s = data.by_id(id);
    if (!s.pet) fail(ErrorCode::EmptyPool, "subject " + std::to_string(id) + " has no PET");
    const double m = mse(s.asl, *s.pet);
    out.push_back({id, s.activated, ssim(s.asl, *s.pet), m, psnr_from_mse(m)});
  }
  return out;
}

inline std::vector<int> ids_of(const DatasetHandle& h, Pairing p) {
  std::vector<int> out;
  for (auto i : h.indices(p)) out.push_back(h.subjects()[i].id);
  return out;
}

struct CrossValidationOptions {
  ModelConfig base{};
  std::uint64_t seed = 0;
  /// Called after each fold finishes.
  std::function<void(const FoldResult&)> on_fold;
};

inline std::vector<FoldResult> crossvalidate(std::shared_ptr<const DatasetHandle> corpus, int k,
                                             const AblationConfig& ablation, const TrainSchedule& schedule,
                                             const CrossValidationOptions& opt = {}) {
  validate(ablation);
  const ModelConfig config = ablation.model(opt.base);
  const auto paired_ids = ids_of(*corpus, Pairing::paired);
  const auto unpaired_ids = ids_of(*corpus, Pairing::unpaired);
  const auto folds = make_folds(paired_ids, k, opt.seed);

  std::vector<FoldResult> results;
  for (int f = 0; f < k; ++f) {
    FoldResult fr;
    fr.fold_id = f;
    fr.validation_ids = folds[f];
    for (int id : paired_ids)
      if (std::find(folds[f].begin(), folds[f].end(), id) == folds[f].end()) fr.train_ids.push_back(id);
    std::vector<int> train_all = fr.train_ids;
    if (config.multitask) train_all.insert(train_all.end(), unpaired_ids.begin(), unpaired_ids.end());
    auto train_set = std::make_shared<const DatasetHandle>(corpus->select(train_all));

    TrainSchedule s = schedule;
    s.seed = derive_seed(schedule.seed, static_cast<std::uint64_t>(f));
    auto trained = train(config, s, train_set, config.multitask ? train_set : nullptr);
    fr.records = evaluate(trained.net, *corpus, fr.validation_ids);
    fr.aggregates = aggregate(fr.records);
    if (opt.on_fold) opt.on_fold(fr);
    results.push_back(std::move(fr));
  }
  return results;
}

// ---------------------------------------------------------------------------
// Reporting

struct AblationRun {
  AblationConfig config;
  std::vector<FoldResult> folds;
  std::size_t parameter_count = 0;

  std::vector<SliceRecord> records() const {
    std::vector<SliceRecord> out;
    for (const auto& f : folds) out.insert(out.end(), f.records.begin(), f.records.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    return out;
  }
};

struct Contrast {
  std::string tag;
  std::optional<AnovaResult> test;  // absent when too few slices
  bool significant() const { return test && test->p < 0.05; }
};

struct SignificanceSummary {
  std::optional<AnovaResult> omnibus;
  std::string reference;
  std::vector<Contrast> overall;                      // per non-reference run
  std::map<int, std::vector<Contrast>> per_fold;      // fold -> per non-reference run
};

namespace detail {

inline std::optional<AnovaResult> try_anova(const std::vector<std::vector<double>>& table) {
  try {
    return anova_rm(table);
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// SSIM columns for the given runs over the subjects listed (row order = ids).
inline std::vector<std::vector<double>> ssim_table(const std::vector<const AblationRun*>& runs,
                                                   const std::vector<int>& ids) {
  std::vector<std::vector<double>> table;
  for (int id : ids) {
    std::vector<double> row;
    for (const auto* r : runs) {
      double v = std::numeric_limits<double>::quiet_NaN();
      for (const auto& rec : r->records())
        if (rec.subject_id == id) v = rec.ssim;
      row.push_back(v);
    }
    table.push_back(std::move(row));
  }
  return table;
}

}  // namespace detail

/// Omnibus ANOVA across all runs plus repeated-measures contrasts of each run
/// against the reference configuration, overall and within each fold.
inline SignificanceSummary significance(const std::vector<AblationRun>& runs) {
  SignificanceSummary out;
  out.reference = reference_config().tag();
  const AblationRun* ref = nullptr;
  for (const auto& r : runs)
    if (r.config == reference_config()) ref = &r;
  if (runs.empty()) return out;

  std::vector<int> ids;
  for (const auto& rec : runs.front().records()) ids.push_back(rec.subject_id);
  std::vector<const AblationRun*> all;
  for (const auto& r : runs) all.push_back(&r);
  if (runs.size() >= 2) out.omnibus = detail::try_anova(detail::ssim_table(all, ids));
  if (!ref) return out;

  for (const auto& r : runs) {
    if (&r == ref) continue;
    out.overall.push_back({r.config.tag(), detail::try_anova(detail::ssim_table({ref, &r}, ids))});
    for (const auto& f : ref->folds)
      out.per_fold[f.fold_id].push_back(
          {r.config.tag(), detail::try_anova(detail::ssim_table({ref, &r}, f.validation_ids))});
  }
  return out;
}

struct ReportPaths {
  fs::path results;
  fs::path table_text;
  fs::path table_csv;
  std::string digest;  // digest over all emitted bytes
};

inline std::string fmt_fixed(double v, int prec) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string fmt_pm(const MetricSummary& m, int prec) {
  return fmt_fixed(m.mean, prec) + "+-" + fmt_fixed(m.sd, prec);
}

inline std::string fmt_p(const std::optional<AnovaResult>& a) {
  if (!a) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "F=%.4f p=%.4g", a->f, a->p);
  return buf;
}

struct ReportInputs {
  std::vector<AblationRun> runs;
  std::string corpus_digest;
  int k = 0;
  nlohmann::ordered_json resolved_config;  // echoed into the results file
};

/// Emits the results file (JSON Lines), a plain-text table and a CSV table
/// into `out_dir`. File names embed digests of the configuration and corpus.
inline ReportPaths report(const ReportInputs& in, const fs::path& out_dir) {
  if (in.runs.empty()) fail(ErrorCode::ConfigError, "nothing to report");
  const SignificanceSummary sig = significance(in.runs);
  auto star = [&](const std::string& tag) -> std::string {
    for (const auto& c : sig.overall)
      if (c.tag == tag) return c.significant() ? "*" : "";
    return "";
  };

  // Machine-readable records.
  std::string results;
  results += nlohmann::ordered_json{{"type", "header"},
                                    {"format", "ASL2PET-RESULTS"},
                                    {"version", 1},
                                    {"corpus_digest", in.corpus_digest},
                                    {"k", in.k},
                                    {"ssim", "per-slice SSIM (11x11 Gaussian window, sigma 1.5), averaged over slices"},
                                    {"config", in.resolved_config}}
                 .dump() +
             "\n";
  for (const auto& run : in.runs)
    for (const auto& f : run.folds)
      for (const auto& r : f.records)
        results += nlohmann::ordered_json{{"type", "slice"},
                                          {"config", run.config.tag()},
                                          {"fold", f.fold_id},
                                          {"subject_id", r.subject_id},
                                          {"condition", condition_name(r.activated)},
                                          {"condition_alias", condition_alias(r.activated)},
                                          {"ssim", r.ssim},
                                          {"mse", r.mse},
                                          {"psnr", std::isinf(r.psnr) ? nlohmann::ordered_json("inf")
                                                                      : nlohmann::ordered_json(r.psnr)}}
                       .dump() +
                   "\n";
  for (const auto& run : in.runs) {
    const auto agg = aggregate(run.records());
    nlohmann::ordered_json j{{"type", "summary"},
                             {"config", run.config.tag()},
                             {"parameters", run.parameter_count}};
    for (const auto& [cond, s] : agg)
      j[cond] = {{"ssim_mean", s.ssim.mean}, {"ssim_sd", s.ssim.sd}, {"mse_mean", s.mse.mean},
                 {"mse_sd", s.mse.sd},       {"psnr_mean", s.psnr.mean}, {"psnr_sd", s.psnr.sd},
                 {"slices", s.ssim.count}};
    for (const auto& c : sig.overall)
      if (c.tag == run.config.tag() && c.test)
        j["contrast_vs_reference"] = {{"f", c.test->f}, {"p", c.test->p}, {"significant", c.significant()}};
    results += j.dump() + "\n";
  }
  if (sig.omnibus)
    results += nlohmann::ordered_json{{"type", "anova"},
                                      {"f", sig.omnibus->f},
                                      {"p", sig.omnibus->p},
                                      {"df_treatment", sig.omnibus->df_treatment},
                                      {"df_error", sig.omnibus->df_error}}
                   .dump() +
               "\n";

  // Human-readable table.
  const char* conds[] = {"activated", "resting", "all"};
  std::string text;
  text += "Cross-validated PET synthesis (k=" + std::to_string(in.k) + ", corpus " + in.corpus_digest + ")\n";
  text += "Metrics: mean+-sd over held-out slices; SSIM computed per slice then averaged.\n";
  text += "Conditions: activated (hypercapnia), resting (normocapnia), all.\n";
  text += "Significance: one-way repeated-measures ANOVA on per-slice SSIM, each configuration\n";
  text += "against the reference " + sig.reference +
          " (two-level contrast, F(1, n-1)); * marks p < 0.05.\n";
  text += "Omnibus over all configurations: " + fmt_p(sig.omnibus) + "\n\n";
  char line[512];
  std::snprintf(line, sizeof line, "%-12s %10s", "config", "params");
  text += line;
  for (const char* c : conds) {
    std::snprintf(line, sizeof line, " | %-15s %-15s %-15s", (std::string(c) + " SSIM").c_str(), "MSE", "PSNR");
    text += line;
  }
  text += "\n";
  std::string csv = "config,parameters,significant";
  for (const char* c : conds)
    for (const char* m : {"ssim_mean", "ssim_sd", "mse_mean", "mse_sd", "psnr_mean", "psnr_sd"})
      csv += std::string(",") + c + "_" + m;
  csv += "\n";
  for (const auto& run : in.runs) {
    const auto agg = aggregate(run.records());
    const std::string tag = run.config.tag() + star(run.config.tag());
    std::snprintf(line, sizeof line, "%-12s %10zu", tag.c_str(), run.parameter_count);
    text += line;
    csv += run.config.tag() + "," + std::to_string(run.parameter_count) + "," +
           (star(run.config.tag()).empty() ? "0" : "1");
    for (const char* c : conds) {
      const auto& s = agg.at(c);
      std::snprintf(line, sizeof line, " | %-15s %-15s %-15s", fmt_pm(s.ssim, 3).c_str(),
                    fmt_pm(s.mse, 4).c_str(), fmt_pm(s.psnr, 2).c_str());
      text += line;
      for (const auto* m : {&s.ssim, &s.mse, &s.psnr})
        csv += "," + fmt_fixed(m->mean, 6) + "," + fmt_fixed(m->sd, 6);
    }
    text += "\n";
    csv += "\n";
  }

  // Per-fold SSIM, the reference contrast within each fold.
  text += "\nPer-fold SSIM (all conditions)\n";
  std::snprintf(line, sizeof line, "%-12s", "config");
  text += line;
  const int folds = static_cast<int>(in.runs.front().folds.size());
  for (int f = 0; f < folds; ++f) {
    std::snprintf(line, sizeof line, " | fold %-10d", f);
    text += line;
  }
  text += "\n";
  for (const auto& run : in.runs) {
    std::snprintf(line, sizeof line, "%-12s", run.config.tag().c_str());
    text += line;
    for (const auto& f : run.folds) {
      std::string cell = fmt_pm(f.aggregates.at("all").ssim, 3);
      const auto it = sig.per_fold.find(f.fold_id);
      if (it != sig.per_fold.end())
        for (const auto& c : it->second)
          if (c.tag == run.config.tag() && c.significant()) cell += "*";
      std::snprintf(line, sizeof line, " | %-15s", cell.c_str());
      text += line;
    }
    text += "\n";
  }

  nlohmann::ordered_json cfgs = nlohmann::ordered_json::array();
  for (const auto& r : in.runs) cfgs.push_back(r.config.tag());
  const std::string config_digest = digest_hex(cfgs.dump() + in.resolved_config.dump());
  const std::string stem = "ablation_" + config_digest.substr(0, 12) + "_" + in.corpus_digest.substr(0, 12);
  ReportPaths paths{out_dir / (stem + ".results.jsonl"), out_dir / (stem + ".table.txt"),
                    out_dir / (stem + ".table.csv"), {}};
  write_file_atomic(paths.results, results);
  write_file_atomic(paths.table_text, text);
  write_file_atomic(paths.table_csv, csv);
  paths.digest = digest_hex(results + text + csv);
  return paths;
}

}  // namespace asl2pet
