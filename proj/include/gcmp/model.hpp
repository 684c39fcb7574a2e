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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/container.hpp"
#include "gcmp/rng.hpp"
#include "gcmp/tensor.hpp"
#include "gcmp/tokenizer.hpp"

namespace gcmp {

enum class HeadType { MLM, MultiLabel, SingleLabel, Regression, TokenLabel };

struct HeadKind {
  HeadType type = HeadType::MLM;
  int num_labels = 0;  // k for classification kinds, 1 for regression, 0 for MLM

  static HeadKind mlm() { return {HeadType::MLM, 0}; }
  static HeadKind multi_label(int k) { return {HeadType::MultiLabel, k}; }
  static HeadKind single_label(int k) { return {HeadType::SingleLabel, k}; }
  static HeadKind regression() { return {HeadType::Regression, 1}; }
  static HeadKind token_label(int k) { return {HeadType::TokenLabel, k}; }

  bool sequence_level() const {
    return type == HeadType::MultiLabel || type == HeadType::SingleLabel ||
           type == HeadType::Regression;
  }
  void validate() const;
  bool operator==(const HeadKind&) const = default;
};

std::string to_string(HeadType t);
HeadType parse_head_type(const std::string& s);

struct ModelConfig {
  int num_layers = 0;
  int hidden = 0;
  int head_dim = 0;
  std::vector<int> heads;     // per layer
  std::vector<int> ffn_dims;  // per layer
  int vocab_size = 0;
  int max_positions = 0;
  float dropout = 0.1f;
  HeadKind head;

  // heads x head_dim == hidden, FFN 4 x hidden.
  static ModelConfig uniform(int layers, int hidden, int heads, int vocab_size, int max_positions,
                             HeadKind head, float dropout = 0.1f);
  void validate() const;
  int total_heads() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Layer/hidden/head counts of the model family; hidden is divided by
// `hidden_divisor` for desk-scale runs.
enum class ModelSize { Large, Base, Small, Tiny };
ModelSize parse_model_size(const std::string& s);
ModelConfig family_config(ModelSize size, int vocab_size, int max_positions, HeadKind head,
                          int hidden_divisor = 8);

// Parameter count implied by a config, counted matrix by matrix.
std::int64_t count_parameters(const ModelConfig& cfg);

// Model configuration + named parameters + the digest of the tokenizer the
// embeddings were trained against. Copies are deep.
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor> params;
  std::string tokenizer_hash;

  Checkpoint() = default;
  Checkpoint(const Checkpoint& other);
  Checkpoint& operator=(const Checkpoint& other);
  Checkpoint(Checkpoint&&) noexcept = default;
  Checkpoint& operator=(Checkpoint&&) noexcept = default;

  const Tensor& param(const std::string& name) const;
  bool has(const std::string& name) const { return params.count(name) != 0; }
  std::int64_t parameter_count() const;
  std::vector<Tensor> parameters() const;  // name order
  void set_requires_grad(bool value);
  // Throws when a name or shape disagrees with `config`.
  void validate() const;

  Container to_container() const;
  static Checkpoint from_container(const Container& c);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

bool bit_equal(const Checkpoint& a, const Checkpoint& b);
std::string layer_prefix(int layer);

Checkpoint init_model(const ModelConfig& cfg, std::uint64_t seed, std::string tokenizer_hash = {});

// --- forward ---

enum class Mode { Train, Eval };

struct Batch {
  std::int64_t size = 0;
  std::int64_t seq_len = 0;
  std::vector<TokenId> ids;  // size x seq_len
  std::vector<float> mask;   // 1 = real token, 0 = padding

  static Batch from_sequences(const std::vector<std::vector<TokenId>>& seqs);
};

// Multiplicative gates on attention-head outputs and FFN neurons; empty means
// every unit is on. Used for sensitivity estimation and pruning equivalence.
struct UnitMask {
  std::vector<std::vector<float>> head_gates;    // [layer][head]
  std::vector<std::vector<float>> neuron_gates;  // [layer][neuron]

  static UnitMask all_on(const ModelConfig& cfg);
};

struct ForwardOptions {
  Mode mode = Mode::Eval;
  std::uint64_t seed = 0;  // dropout stream
  const UnitMask* mask = nullptr;
};

// MLM -> (B, S, V); sequence-level heads -> (B, k); TokenLabel -> (B, S, k).
Tensor forward(const Checkpoint& ckpt, const Batch& batch, const ForwardOptions& opts = {});

// Building blocks of forward(), exposed for layer-wise caching.
Tensor embed(const Checkpoint& ckpt, const Batch& batch, Mode mode, Rng& rng);
Tensor attention_bias(const Batch& batch);
Tensor encoder_layer(const Checkpoint& ckpt, int layer, const Tensor& x, const Tensor& bias,
                     Mode mode, Rng& rng, const UnitMask* mask);
Tensor task_head(const Checkpoint& ckpt, const Tensor& hidden, Mode mode, Rng& rng);

// --- parameter surgery (all return new checkpoints) ---

// Rows of the token embedding (and the tied MLM output bias) reindexed by
// prune.kept_old_ids.
Checkpoint reshape_embeddings(const Checkpoint& ckpt, const VocabPruneResult& prune);

// Student whose layer j is the teacher's layer indices[j]. Embeddings come from
// `teacher`; the head from `head_donor` when given, else from `teacher`.
Checkpoint extract_layers(const Checkpoint& teacher, std::span<const int> indices,
                          const Checkpoint* head_donor = nullptr);

Checkpoint remove_heads(const Checkpoint& ckpt, const std::vector<std::vector<int>>& per_layer_head_ids);
Checkpoint remove_ffn_neurons(const Checkpoint& ckpt,
                              const std::vector<std::vector<int>>& per_layer_neuron_ids);

// Drops any existing head and attaches a freshly initialised `head`.
Checkpoint with_task_head(const Checkpoint& body, HeadKind head, std::uint64_t seed);
// Replaces body's head parameters (and head kind) with donor's.
Checkpoint with_head_from(const Checkpoint& body, const Checkpoint& donor);

}  // namespace gcmp
