// Copyright 2026 The gcmp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "support/schema_check.hpp"
#include "gcmp/container.hpp"
#include "gcmp/data.hpp"
#include "gcmp/model.hpp"
#include "gcmp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "gcmp_cli_test";

int run(const std::string& args, const std::string& log = "last") {
  const auto cmd = std::string(GCMP_CLI) + " " + args + " > " + (kWork / (log + ".out")).string() + " 2> " +
                   (kWork / (log + ".err")).string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

json schema(const std::string& name) { return read_json(fs::path(GCMP_SCHEMA_DIR) / (name + ".schema.json")); }

std::string w(const std::string& rel) { return (kWork / rel).string(); }

// Data, tokenizer and a small trained teacher, all produced by the CLI itself.
void prepare() {
  static bool done = false;
  if (done) return;
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  REQUIRE(run("synth --classes 3 --train 90 --validation 30 --test 30 --corpus-lines 200 --topic-words 4 "
              "--filler-words 30 --seed 5 --out " + w("d")) == 0);
  REQUIRE(run("train-tokenizer --corpus " + w("d/corpus.txt") + " --vocab-size 120 --out " + w("d")) == 0);
  {
    std::ofstream(kWork / "pre.json") << R"({"train": {"lr": 0.001, "max_epochs": 1, "patience": 1}})";
    std::ofstream(kWork / "ft.json") << R"({"train": {"lr": 0.001, "max_epochs": 3, "patience": 3}})";
  }
  REQUIRE(run("pretrain --tokenizer " + w("d/tokenizer.json") + " --corpus " + w("d/corpus.txt") +
              " --layers 3 --hidden 16 --heads 4 --max-len 64 --seed 1 --config " + w("pre.json") + " --out " +
              w("pre")) == 0);
  REQUIRE(run("finetune --model " + w("pre/pretrained.gcmp") + " --tokenizer " + w("d/tokenizer.json") + " --task " +
              w("d/task.json") + " --train " + w("d/train.jsonl") + " --validation " + w("d/validation.jsonl") +
              " --config " + w("ft.json") + " --out " + w("teacher")) == 0);
  done = true;
}

std::string task_flags() {
  return " --tokenizer " + w("d/tokenizer.json") + " --task " + w("d/task.json");
}

}  // namespace

TEST_CASE("usage errors exit 1 and print usage") {
  prepare();
  CHECK(run("") == 1);
  CHECK(run("no-such-command", "unknown") == 1);
  CHECK(slurp(kWork / "unknown.err").find("Usage") != std::string::npos);
  CHECK(run("evaluate --no-such-flag", "flag") == 1);
  CHECK(slurp(kWork / "flag.err").find("Usage") != std::string::npos);
  CHECK(run("--help") == 0);
}

TEST_CASE("validation errors exit 1, runtime failures exit 2") {
  prepare();
  const auto teacher = w("teacher/finetuned.gcmp");
  CHECK(run("bench --artifact " + teacher + " --teacher " + teacher + " --runs 10") == 1);
  CHECK(run("prune-depth --model " + teacher + " --keep 9") == 1);
  CHECK(run("optimize-graph --model " + w("missing.gcmp")) == 2);
  CHECK(run("evaluate --task " + w("d/task.json") + " --predictions " + w("d/test.jsonl") + " --gold " +
            w("d/validation.jsonl")) == 0);  // equal lengths, mismatched labels are fine
  CHECK(run("evaluate --task " + w("d/task.json") + " --predictions " + w("d/test.jsonl")) == 1);
}

TEST_CASE("evaluate: predictions equal to gold score 1.0 everywhere") {
  prepare();
  REQUIRE(run("evaluate --task " + w("d/task.json") + " --predictions " + w("d/test.jsonl") + " --gold " +
                  w("d/test.jsonl") + " --out " + w("eval_gold")) == 0);
  const auto j = read_json(kWork / "eval_gold/metrics.json");
  REQUIRE(j.at("metrics").size() >= 3);
  for (const auto& [name, v] : j.at("metrics").items()) CHECK_MESSAGE(v.get<double>() == 1.0, name);
  CHECK(j.at("headline").get<double>() == 1.0);
}

TEST_CASE("evaluate: model scores match the library") {
  prepare();
  REQUIRE(run("evaluate --model " + w("teacher/finetuned.gcmp") + task_flags() + " --data " + w("d/test.jsonl") +
              " --out " + w("eval_model")) == 0);
  const auto j = read_json(kWork / "eval_model/metrics.json");
  const auto tok = gcmp::BpeTokenizer::load(w("d/tokenizer.json"));
  const auto spec = gcmp::TaskSpec::from_json(read_json(kWork / "d/task.json"));
  const auto data = gcmp::encode_examples(tok, gcmp::load_jsonl(w("d/test.jsonl")), spec);
  const auto e = gcmp::evaluate(gcmp::Checkpoint::load(w("teacher/finetuned.gcmp")), data, spec);
  CHECK(j.at("metrics") == e.metrics.to_json());
  CHECK(j.at("loss").get<double>() == e.loss);
}

TEST_CASE("stage subcommands chain") {
  prepare();
  const auto teacher = w("teacher/finetuned.gcmp");
  REQUIRE(run("prune-vocab --model " + teacher + " --tokenizer " + w("d/tokenizer.json") + " --corpus " +
              w("d/train.jsonl") + " --out " + w("pv")) == 0);
  const auto pv = read_json(kWork / "pv/prune_vocab.json");
  CHECK(pv.at("removed_embedding_params").get<long>() == pv.at("removed_tokens").get<long>() * 16);
  CHECK(pv.at("params_before").get<long>() - pv.at("params_after").get<long>() ==
        pv.at("removed_embedding_params").get<long>());

  REQUIRE(run("prune-depth --model " + teacher + " --keep 2 --strategy min_pairwise_distance --metric cosine" +
              task_flags() + " --data " + w("d/validation.jsonl") + " --out " + w("pd")) == 0);
  CHECK(read_json(kWork / "pd/prune_depth.json").at("kept_layers").size() == 2);

  std::ofstream(kWork / "width.json") << R"({"width": {"heads_per_iteration": 4, "neurons_per_iteration": 16}})";
  REQUIRE(run("prune-width --model " + w("pd/depth_pruned.gcmp") + " --heads 4 --ffn 32" + task_flags() + " --data " +
              w("d/validation.jsonl") + " --config " + w("width.json") + " --out " + w("pw")) == 0);
  const auto pw = read_json(kWork / "pw/prune_width.json");
  CHECK(pw.at("ffn_dims") == json::array({32, 32}));

  std::ofstream(kWork / "kd.json") << R"({"distill": {"train": {"lr": 0.001, "max_epochs": 1, "patience": 1}}})";
  REQUIRE(run("distill --teacher " + teacher + " --student " + w("pw/width_pruned.gcmp") + task_flags() +
              " --train " + w("d/train.jsonl") + " --validation " + w("d/validation.jsonl") + " --config " +
              w("kd.json") + " --out " + w("kd")) == 0);
  REQUIRE(run("optimize-graph --model " + w("kd/distilled.gcmp") + " --out " + w("og")) == 0);
  const auto og = read_json(kWork / "og/optimize.json");
  CHECK(og.at("nodes_after").get<int>() < og.at("nodes_before").get<int>());
  REQUIRE(run("quantize --graph " + w("og/graph.gcmp") + " --out " + w("q")) == 0);
  CHECK(gcmp::read_container(w("q/graph_int8.gcmp")).header.at("kind") == "graph");
  CHECK(run("evaluate --model " + w("q/graph_int8.gcmp") + task_flags() + " --data " + w("d/test.jsonl")) == 0);
}

TEST_CASE("bench output matches the efficiency report schema") {
  prepare();
  REQUIRE(run("prune-depth --model " + w("teacher/finetuned.gcmp") + " --keep 1 --out " + w("bench_in")) == 0);
  REQUIRE(run("bench --artifact " + w("bench_in/depth_pruned.gcmp") + " --teacher " + w("teacher/finetuned.gcmp") +
              task_flags() + " --data " + w("d/test.jsonl") + " --out " + w("bench")) == 0);
  const auto j = read_json(kWork / "bench/bench.json");
  const auto s = schema("efficiency_report");
  const auto errors = schema_check::validate(s, j);
  for (const auto& e : errors) MESSAGE(e);
  CHECK(errors.empty());
  CHECK(j.at("threads") == 1);
  CHECK(j.at("compression_rate").get<double>() > 1.0);

  json broken = j;
  broken.erase("acceleration");
  broken["runs"] = 3;
  CHECK(schema_check::validate(s, broken).size() == 2);
}

TEST_CASE("compress with a fixed seed is byte-identical across runs") {
  prepare();
  json plan = {{"teacher", "teacher/finetuned.gcmp"},
               {"tokenizer", "d/tokenizer.json"},
               {"train", "d/train.jsonl"},
               {"validation", "d/validation.jsonl"},
               {"test", "d/test.jsonl"},
               {"task", read_json(kWork / "d/task.json")},
               {"target", {{"layers", 2}, {"total_heads", 4}, {"ffn", 32}}},
               {"width", {{"heads_per_iteration", 4}, {"neurons_per_iteration", 16}}},
               {"calibration_examples", 30},
               {"distill", {{"train", {{"lr", 0.001}, {"max_epochs", 1}, {"patience", 1}}}}},
               {"grids", {{"depth", {{{"name", "lr"}, {"values", {0.001}}}}},
                          {"width", {{{"name", "lr"}, {"values", {0.001}}}}}}},
               {"recovery", {{"max_epochs", 1}, {"patience", 1}}},
               {"measure_latency", false}};
  std::ofstream(kWork / "plan.json") << plan.dump(2);
  CHECK(schema_check::validate(schema("compression_plan"), plan).empty());

  REQUIRE(run("compress --config " + w("plan.json") + " --seed 7 --out " + w("run1")) == 0);
  REQUIRE(run("--seed 7 compress --config " + w("plan.json") + " --out " + w("run2")) == 0);
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(kWork / "run1")) {
    const auto name = entry.path().filename();
    if (name == "plan.json") continue;  // records its own output directory
    CHECK_MESSAGE(slurp(entry.path()) == slurp(kWork / "run2" / name), name.string());
    ++compared;
  }
  CHECK(compared == 8);
  const auto report = read_json(kWork / "run1/report.json");
  const auto errors = schema_check::validate(schema("compression_report"), report);
  for (const auto& e : errors) MESSAGE(e);
  CHECK(errors.empty());
  CHECK(report.at("steps").back().at("step") == "S4.2");

  REQUIRE(run("report --dir " + w("run1"), "report") == 0);
  CHECK(slurp(kWork / "report.out").find("Step 4 (GO+Q)") != std::string::npos);

  REQUIRE(run("compress --config " + w("plan.json") + " --seed 8 --out " + w("run3")) == 0);
  CHECK(slurp(kWork / "run3/plan.json").find("\"seed\": 8") != std::string::npos);
}
