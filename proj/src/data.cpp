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

#include "gcmp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gcmp/error.hpp"
#include "gcmp/ops.hpp"

namespace gcmp {

void TaskSpec::validate() const {
  head.validate();
  if (head.type == HeadType::MLM) throw ValidationError("a task needs a non-MLM head");
  if (head.type == HeadType::TokenLabel) {
    if (static_cast<int>(tag_names.size()) != head.num_labels) {
      throw ValidationError("token task needs exactly one tag name per label");
    }
    if (std::find(tag_names.begin(), tag_names.end(), "O") == tag_names.end()) {
      throw ValidationError("token task tag set must contain 'O'");
    }
  }
  if (max_len < 3) throw ValidationError("max_len must leave room for <cls>, <sep> and one token");
}

nlohmann::json TaskSpec::to_json() const {
  nlohmann::json j{{"head", to_string(head.type)}, {"num_labels", head.num_labels}, {"max_len", max_len}};
  if (!tag_names.empty()) j["tag_names"] = tag_names;
  return j;
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec s;
  try {
    s.head.type = parse_head_type(j.at("head").get<std::string>());
    s.head.num_labels = s.head.type == HeadType::Regression ? 1 : j.at("num_labels").get<int>();
    s.max_len = j.value("max_len", 64);
    if (j.contains("tag_names")) s.tag_names = j.at("tag_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed task spec: ") + e.what());
  }
  s.validate();
  return s;
}

Example parse_example(const nlohmann::json& j) {
  Example e;
  try {
    if (j.contains("group")) e.group = j.at("group").get<std::string>();
    if (j.contains("tokens")) {
      e.tokens = j.at("tokens").get<std::vector<std::string>>();
      e.target.tags = j.at("tags").get<std::vector<std::string>>();
      if (e.tokens.size() != e.target.tags.size()) throw ValidationError("tokens and tags differ in length");
      return e;
    }
    e.text = j.at("text").get<std::string>();
    if (j.contains("label")) {
      e.target.label = j.at("label").get<int>();
    } else if (j.contains("labels")) {
      e.target.labels = j.at("labels").get<std::vector<int>>();
      std::sort(e.target.labels.begin(), e.target.labels.end());
      e.target.labels.erase(std::unique(e.target.labels.begin(), e.target.labels.end()), e.target.labels.end());
    } else if (j.contains("score")) {
      e.target.score = j.at("score").get<double>();
      if (!std::isfinite(e.target.score)) throw ValidationError("non-finite regression score");
    } else {
      throw ValidationError("example has no label, labels, score or tags field");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed example: ") + ex.what());
  }
  return e;
}

nlohmann::json example_to_json(const Example& e) {
  nlohmann::json j;
  if (!e.tokens.empty()) {
    j["tokens"] = e.tokens;
    j["tags"] = e.target.tags;
  } else {
    j["text"] = e.text;
    if (e.target.label >= 0) {
      j["label"] = e.target.label;
    } else if (!e.target.labels.empty()) {
      j["labels"] = e.target.labels;
    } else {
      j["score"] = e.target.score;
    }
  }
  if (!e.group.empty()) j["group"] = e.group;
  return j;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_example(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : examples) out << example_to_json(e).dump() << '\n';
}

void validate_examples(std::span<const Example> examples, const TaskSpec& spec) {
  const int k = spec.head.num_labels;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& t = examples[i].target;
    const std::string where = "example " + std::to_string(i) + ": ";
    switch (spec.head.type) {
      case HeadType::SingleLabel:
        if (t.label < 0 || t.label >= k) throw ValidationError(where + "label outside label space");
        break;
      case HeadType::MultiLabel:
        if (examples[i].text.empty() && !examples[i].tokens.empty()) throw ValidationError(where + "expected text");
        for (int l : t.labels)
          if (l < 0 || l >= k) throw ValidationError(where + "label outside label space");
        break;
      case HeadType::Regression:
        if (t.label >= 0 || !t.labels.empty()) throw ValidationError(where + "expected a score");
        break;
      case HeadType::TokenLabel:
        if (examples[i].tokens.size() != t.tags.size()) throw ValidationError(where + "expected tokens/tags");
        for (const auto& tag : t.tags)
          if (std::find(spec.tag_names.begin(), spec.tag_names.end(), tag) == spec.tag_names.end()) {
            throw ValidationError(where + "tag '" + tag + "' outside tag set");
          }
        break;
      case HeadType::MLM:
        throw ValidationError("MLM is not a supervised task");
    }
  }
}

std::vector<EncodedExample> encode_examples(const BpeTokenizer& tok, std::span<const Example> examples,
                                            const TaskSpec& spec) {
  spec.validate();
  validate_examples(examples, spec);
  const std::size_t body = static_cast<std::size_t>(spec.max_len - 2);
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    EncodedExample e;
    e.target = ex.target;
    e.group = ex.group;
    e.ids.push_back(SpecialIds::kCls);
    if (spec.head.type == HeadType::TokenLabel) {
      e.token_labels.push_back(ops::kIgnore);
      for (std::size_t w = 0; w < ex.tokens.size(); ++w) {
        const auto pieces = tok.encode(ex.tokens[w]);
        if (pieces.empty() || e.ids.size() - 1 + pieces.size() > body) {
          e.word_position.push_back(-1);
          continue;
        }
        const auto tag = std::find(spec.tag_names.begin(), spec.tag_names.end(), ex.target.tags[w]);
        e.word_position.push_back(static_cast<int>(e.ids.size()));
        for (std::size_t p = 0; p < pieces.size(); ++p) {
          e.ids.push_back(pieces[p]);
          e.token_labels.push_back(p == 0 ? static_cast<std::int32_t>(tag - spec.tag_names.begin()) : ops::kIgnore);
        }
      }
      e.token_labels.push_back(ops::kIgnore);
    } else {
      auto pieces = tok.encode(ex.text);
      if (pieces.size() > body) pieces.resize(body);
      e.ids.insert(e.ids.end(), pieces.begin(), pieces.end());
    }
    e.ids.push_back(SpecialIds::kSep);
    out.push_back(std::move(e));
  }
  return out;
}

TaskBatch make_batch(std::span<const EncodedExample> data, std::span<const std::size_t> indices,
                     const TaskSpec& spec) {
  TaskBatch tb;
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(indices.size());
  for (std::size_t i : indices) seqs.push_back(data[i].ids);
  tb.batch = Batch::from_sequences(seqs);
  const auto b = static_cast<std::int64_t>(indices.size());
  const std::int64_t k = spec.head.num_labels;
  switch (spec.head.type) {
    case HeadType::SingleLabel:
      for (std::size_t i : indices) tb.labels.push_back(data[i].target.label);
      break;
    case HeadType::MultiLabel: {
      std::vector<float> t(static_cast<std::size_t>(b * k), 0.0f);
      for (std::int64_t r = 0; r < b; ++r)
        for (int l : data[indices[r]].target.labels) t[r * k + l] = 1.0f;
      tb.targets = Tensor(Shape{b, k}, std::move(t));
      break;
    }
    case HeadType::Regression: {
      std::vector<float> t;
      for (std::size_t i : indices) t.push_back(static_cast<float>(data[i].target.score));
      tb.targets = Tensor(Shape{b, 1}, std::move(t));
      break;
    }
    case HeadType::TokenLabel: {
      tb.labels.assign(static_cast<std::size_t>(b * tb.batch.seq_len), ops::kIgnore);
      for (std::int64_t r = 0; r < b; ++r) {
        const auto& tl = data[indices[r]].token_labels;
        std::copy(tl.begin(), tl.end(), tb.labels.begin() + r * tb.batch.seq_len);
      }
      break;
    }
    case HeadType::MLM:
      throw ValidationError("MLM is not a supervised task");
  }
  return tb;
}

Tensor task_loss(const TaskSpec& spec, const Tensor& logits, const TaskBatch& batch) {
  switch (spec.head.type) {
    case HeadType::SingleLabel:
      return ops::cross_entropy(logits, batch.labels);
    case HeadType::TokenLabel: {
      const std::int64_t k = spec.head.num_labels;
      return ops::cross_entropy(ops::reshape(logits, {logits.numel() / k, k}), batch.labels);
    }
    case HeadType::MultiLabel:
      return ops::binary_cross_entropy(logits, batch.targets);
    case HeadType::Regression:
      return ops::mean_squared_error(logits, batch.targets);
    case HeadType::MLM:
      break;
  }
  throw ValidationError("MLM is not a supervised task");
}

std::vector<Target> decode_predictions(const TaskSpec& spec, const Tensor& logits,
                                       std::span<const EncodedExample> data,
                                       std::span<const std::size_t> indices) {
  std::vector<Target> out;
  const auto v = logits.data();
  const int k = spec.head.num_labels;
  auto argmax = [&](std::int64_t offset) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (v[offset + j] > v[offset + best]) best = j;
    return best;
  };
  for (std::size_t r = 0; r < indices.size(); ++r) {
    Target t;
    const auto row = static_cast<std::int64_t>(r);
    switch (spec.head.type) {
      case HeadType::SingleLabel:
        t.label = argmax(row * k);
        break;
      case HeadType::MultiLabel:
        for (int j = 0; j < k; ++j)
          if (v[row * k + j] > 0.0f) t.labels.push_back(j);
        break;
      case HeadType::Regression:
        t.score = v[row];
        break;
      case HeadType::TokenLabel: {
        const std::int64_t s = logits.dim(1);
        for (int pos : data[indices[r]].word_position)
          t.tags.push_back(pos < 0 ? std::string("O") : spec.tag_names[argmax((row * s + pos) * k)]);
        break;
      }
      case HeadType::MLM:
        throw ValidationError("MLM is not a supervised task");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace gcmp
