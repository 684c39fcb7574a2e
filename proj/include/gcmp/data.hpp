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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/model.hpp"
#include "gcmp/tokenizer.hpp"

namespace gcmp {

// Gold or predicted target of one example; which field is used depends on the
// task's head kind.
struct Target {
  int label = -1;                  // SingleLabel
  std::vector<int> labels;         // MultiLabel, ascending
  double score = 0.0;              // Regression
  std::vector<std::string> tags;   // TokenLabel, one BIO tag per word

  bool operator==(const Target&) const = default;
};

struct Example {
  std::string text;                 // sequence-level tasks
  std::vector<std::string> tokens;  // token tasks (pre-split words)
  Target target;
  std::string group;
};

struct Dataset {
  std::vector<Example> train, validation, test;
};

// Head kind plus the label space. Token tasks carry their tag inventory;
// tag index == output unit.
struct TaskSpec {
  HeadKind head;
  std::vector<std::string> tag_names;
  int max_len = 64;  // including <cls>/<sep>

  void validate() const;
  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

// Accepted line shapes: {"text","label"} | {"text","labels"} | {"text","score"}
// | {"tokens","tags"}, each with an optional "group".
Example parse_example(const nlohmann::json& j);
nlohmann::json example_to_json(const Example& e);
std::vector<Example> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples);

// Checks every target against the task's label space.
void validate_examples(std::span<const Example> examples, const TaskSpec& spec);

struct EncodedExample {
  std::vector<TokenId> ids;            // <cls> ... <sep>
  std::vector<std::int32_t> token_labels;  // TokenLabel: per position, -1 = not scored
  std::vector<int> word_position;      // TokenLabel: position of each word's first piece, -1 if cut
  Target target;
  std::string group;
};

std::vector<EncodedExample> encode_examples(const BpeTokenizer& tok, std::span<const Example> examples,
                                            const TaskSpec& spec);

struct TaskBatch {
  Batch batch;
  std::vector<std::int32_t> labels;  // SingleLabel: per example; TokenLabel: per position
  Tensor targets;                    // MultiLabel (B, k) in {0,1}; Regression (B, 1)
};

TaskBatch make_batch(std::span<const EncodedExample> data, std::span<const std::size_t> indices,
                     const TaskSpec& spec);

// Cross-entropy, binary cross-entropy or squared error by head kind.
Tensor task_loss(const TaskSpec& spec, const Tensor& logits, const TaskBatch& batch);

// Decodes logits of batch row r (examples in `indices` order) into targets.
std::vector<Target> decode_predictions(const TaskSpec& spec, const Tensor& logits,
                                       std::span<const EncodedExample> data,
                                       std::span<const std::size_t> indices);

}  // namespace gcmp
