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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/data.hpp"
#include "gcmp/model.hpp"

namespace gcmp {

// --- depth ---

enum class DepthStrategy { Random, KeepFirstK, KeepLastK, EverySecond, MinPairwiseDistance };
enum class DistanceMetric { MAE, Cosine };
enum class Anchor { FirstToken, MeanToken };

struct DepthPruneStrategy {
  DepthStrategy kind = DepthStrategy::KeepFirstK;
  std::uint64_t seed = 0;                       // Random
  DistanceMetric metric = DistanceMetric::MAE;  // MinPairwiseDistance
  Anchor anchor = Anchor::FirstToken;           // MinPairwiseDistance

  nlohmann::json to_json() const;
  static DepthPruneStrategy from_json(const nlohmann::json& j);
};

std::string to_string(DepthStrategy s);
DepthStrategy parse_depth_strategy(const std::string& s);

// Indices of the layers to keep, strictly increasing, keep_k long.
// EverySecond keeps 0, 2, 4, ...; when that yields fewer than keep_k layers the
// odd indices fill in from the bottom. MinPairwiseDistance repeatedly drops the
// kept layer whose output is closest to the output of the kept layer below it
// (the embedding output for the lowest one), distances averaged over
// `calibration` examples.
std::vector<int> select_layers(const Checkpoint& teacher, int keep_k, const DepthPruneStrategy& strategy,
                               std::span<const EncodedExample> calibration = {}, const TaskSpec* spec = nullptr);

// Per-example anchor vectors of the embedding output (index 0) and every
// layer output (index l + 1): [depth + 1][example][hidden].
std::vector<std::vector<std::vector<float>>> layer_anchors(const Checkpoint& ck,
                                                           std::span<const EncodedExample> data,
                                                           const TaskSpec& spec, Anchor anchor);

// --- width ---

struct SensitivityOptions {
  int batch_size = 32;
  int max_batches = 0;  // 0 = every calibration batch
  bool heads = true;
  bool neurons = true;
};

// Loss increase when one unit is zero-masked; lower is safer to remove.
struct UnitScores {
  double baseline_loss = 0.0;
  std::vector<std::vector<double>> heads;    // [layer][head]
  std::vector<std::vector<double>> neurons;  // [layer][neuron]
};

UnitScores unit_sensitivities(const Checkpoint& ck, std::span<const EncodedExample> calibration,
                              const TaskSpec& spec, const SensitivityOptions& opts = {});

// Mean task loss over the calibration batches, optionally under a unit mask.
double calibration_loss(const Checkpoint& ck, std::span<const EncodedExample> calibration, const TaskSpec& spec,
                        const SensitivityOptions& opts = {}, const UnitMask* mask = nullptr);

struct WidthPruneConfig {
  int target_total_heads = 0;
  int target_ffn_neurons = 0;     // per layer
  int heads_per_iteration = 1;
  int neurons_per_iteration = 0;  // 0 = hidden / 8
  SensitivityOptions sensitivity;

  void validate(const ModelConfig& cfg) const;
  nlohmann::json to_json() const;
  static WidthPruneConfig from_json(const nlohmann::json& j);
};

struct WidthPruneStep {
  std::vector<std::vector<int>> heads_removed;    // ids in the model of that iteration
  std::vector<std::vector<int>> neurons_removed;
  std::int64_t params_after = 0;
};

struct WidthPruneResult {
  Checkpoint ckpt;
  std::vector<WidthPruneStep> steps;
};

// Greedy loop: rescore, drop the lowest-scoring heads (globally) and neurons
// (per layer), repeat until the targets hold. Ties go to the lower
// (layer, unit). A layer always keeps one head.
WidthPruneResult prune_width(const Checkpoint& ck, const WidthPruneConfig& cfg,
                             std::span<const EncodedExample> calibration, const TaskSpec& spec);

// Same targets, units chosen uniformly at random.
Checkpoint random_prune_width(const Checkpoint& ck, const WidthPruneConfig& cfg, std::uint64_t seed);

}  // namespace gcmp
