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

#include <fstream>
#include <sstream>

#include "asl2pet/cli.hpp"
#include "support.hpp"

using namespace asl2pet;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "asl2pet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream os, es;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), os, es);
  return {code, os.str(), es.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string last_word_of(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  return {};
}

}  // namespace

TEST_CASE("generate writes a manifest with the requested subjects") {
  testing::ScratchDir dir("cli_generate");
  const auto r = invoke({"generate", "--paired", "4", "--unpaired", "8", "--seed", "7", "--out",
                         (dir.path / "c").string()});
  REQUIRE(r.code == cli::kOk);
  const auto m = read_manifest(dir.path / "c" / "manifest.jsonl");
  CHECK(m.entries.size() == 12);
  CHECK(m.paired_count() == 4);
  CHECK(fs::exists(dir.path / "c" / "generate.config.json"));
  CHECK(r.out.find("12 subjects (4 paired)") != std::string::npos);
}

TEST_CASE("help and usage errors") {
  CHECK(invoke({"--help"}).code == cli::kOk);
  CHECK(invoke({"train", "--help"}).code == cli::kOk);
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"frobnicate"}).code == cli::kUsage);
  CHECK(invoke({"train", "--iterations", "many"}).code == cli::kUsage);
  CHECK(invoke({"train", "--config", "no-such-preset"}).code == cli::kUsage);
  CHECK(invoke({"ablate", "--configs", "S+T1+RA+DA", "--manifest", "x", "--out", "y"}).code == cli::kUsage);
}

TEST_CASE("data errors exit with the data code") {
  testing::ScratchDir dir("cli_data");
  const auto r = invoke({"train", "--manifest", (dir.path / "missing.jsonl").string(), "--out",
                         (dir.path / "o").string(), "--iterations", "2"});
  CHECK(r.code == cli::kData);
  CHECK(r.err.find("error") != std::string::npos);

  REQUIRE(invoke({"generate", "--paired", "2", "--unpaired", "0", "--height", "16", "--width", "16", "--out",
                  (dir.path / "c").string()})
              .code == cli::kOk);
  {
    std::ofstream f(dir.path / "c" / "sub0000_pet.f32", std::ios::binary | std::ios::app);
    f << "junk";
  }
  const auto bad = invoke({"eval", "--checkpoint", (dir.path / "none.bin").string(), "--manifest",
                           (dir.path / "c" / "manifest.jsonl").string(), "--out", (dir.path / "o").string()});
  CHECK(bad.code == cli::kData);
}

TEST_CASE("train, eval and plot on a small corpus") {
  testing::ScratchDir dir("cli_train");
  const std::string corpus = (dir.path / "c").string();
  REQUIRE(invoke({"generate", "--paired", "3", "--unpaired", "3", "--height", "16", "--width", "16", "--seed", "1",
                  "--out", corpus})
              .code == cli::kOk);
  const std::string manifest = corpus + "/manifest.jsonl";
  const std::string out = (dir.path / "run").string();
  const auto t = invoke({"train", "--manifest", manifest, "--out", out, "--iterations", "4", "--batch-size", "2",
                         "--base-channels", "4"});
  REQUIRE(t.code == cli::kOk);
  CHECK(t.err.empty());
  fs::path model;
  int configs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.path().extension() == ".bin") model = e.path();
    if (e.path().string().ends_with(".config.json")) ++configs;
  }
  REQUIRE(!model.empty());
  CHECK(configs == 1);

  const auto e = invoke({"eval", "--checkpoint", model.string(), "--manifest", manifest, "--out", out});
  REQUIRE(e.code == cli::kOk);
  CHECK(e.out.find("model") != std::string::npos);
  CHECK(e.out.find("baseline") != std::string::npos);

  const auto p = invoke({"plot", "--checkpoint", model.string(), "--manifest", manifest, "--out",
                         (dir.path / "plots").string()});
  REQUIRE(p.code == cli::kOk);
  CHECK(fs::exists(dir.path / "plots" / "plot.config.json"));

  const auto single = invoke({"train", "--config", "single-task", "--manifest", manifest, "--out",
                              (dir.path / "single").string(), "--iterations", "2", "--batch-size", "2",
                              "--base-channels", "4"});
  REQUIRE(single.code == cli::kOk);
  CHECK(single.err.find("warning: single-task configuration ignores unpaired data") != std::string::npos);
}

TEST_CASE("ablate reproduces its report byte for byte") {
  testing::ScratchDir dir("cli_ablate");
  const std::string corpus = (dir.path / "c").string();
  REQUIRE(invoke({"generate", "--paired", "6", "--unpaired", "2", "--height", "16", "--width", "16", "--seed", "3",
                  "--out", corpus})
              .code == cli::kOk);
  auto ablate = [&](const std::string& out) {
    return invoke({"ablate", "--manifest", corpus + "/manifest.jsonl", "--out", out, "--k", "3", "--configs",
                   "M+T1+RA+DA,M-T1-RA-DA", "--iterations", "2", "--batch-size", "2", "--base-channels", "4",
                   "--seed", "2"});
  };
  const auto a = ablate((dir.path / "a").string());
  const auto b = ablate((dir.path / "b").string());
  REQUIRE(a.code == cli::kOk);
  REQUIRE(b.code == cli::kOk);
  const std::string da = last_word_of(a.out, "report digest ");
  CHECK(!da.empty());
  CHECK(da == last_word_of(b.out, "report digest "));
  // Table order is kept regardless of how --configs was listed.
  CHECK(a.out.find("M-T1-RA-DA") < a.out.find("M+T1+RA+DA"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "a")) {
    const auto other = dir.path / "b" / e.path().filename();
    REQUIRE(fs::exists(other));
    if (e.path().string().ends_with(".config.json")) continue;
    CHECK(slurp(e.path()) == slurp(other));
    ++files;
  }
  CHECK(files == 3);
}
