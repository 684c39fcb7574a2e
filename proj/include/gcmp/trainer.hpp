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
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "gcmp/data.hpp"
#include "gcmp/metrics.hpp"
#include "gcmp/model.hpp"
#include "gcmp/tokenizer.hpp"

namespace gcmp {

enum class Schedule { WarmupCosine, Constant };

struct TrainConfig {
  float lr = 5e-5f;
  int batch_size = 16;
  int max_epochs = 20;
  int patience = 3;
  float warmup_fraction = 0.05f;
  Schedule schedule = Schedule::Constant;
  std::uint64_t seed = 0;
  float weight_decay = 0.01f;
  int eval_batch_size = 64;
  // MLM only.
  float mask_rate = 0.15f;
  std::vector<std::pair<int, int>> seq_len_phases;  // (steps, max_len)
  int eval_interval = 100;                          // steps between validations

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
};

// Grids used for fine-tuning and distillation hyperparameter search.
inline const std::vector<double> kFinetuneLrGrid{1e-4, 3e-4, 1e-5, 3e-5, 5e-5, 1e-6};
inline const std::vector<double> kDistillLrGrid{1e-5, 3e-5, 5e-5, 7e-5, 1e-4};
inline const std::vector<double> kTemperatureGrid{1, 5, 10, 15};
inline const std::vector<double> kTaskWeightGrid{0.1, 0.3, 0.6};

// Linear warm-up from 0 to `peak` over warmup_fraction * total steps, then
// cosine decay to 0 at `total`. Constant returns `peak`.
float lr_at(std::int64_t step, std::int64_t total, float peak, float warmup_fraction, Schedule schedule);

// --- MLM ---

enum class MaskAction : std::uint8_t { None, Masked, Random, Kept };

struct MlmCorruption {
  std::vector<TokenId> ids;
  std::vector<std::int32_t> targets;  // original id at selected positions, -1 elsewhere
  std::vector<MaskAction> action;
};

// Each non-special real token is selected with probability mask_rate; selected
// tokens become <mask> (80%), a random non-special token (10%) or stay (10%).
MlmCorruption mlm_mask(const Batch& batch, float mask_rate, int vocab_size, std::uint64_t seed);

struct MlmEval {
  double loss = 0.0;
  double accuracy = 0.0;  // top-1 at selected positions
};
MlmEval evaluate_mlm(const Checkpoint& ck, std::span<const std::vector<TokenId>> seqs, float mask_rate,
                     std::uint64_t seed, int batch_size = 64);

// <cls> ids <sep>, truncated to max_len.
std::vector<std::vector<TokenId>> encode_lines(const BpeTokenizer& tok, std::span<const std::string> lines,
                                               int max_len);

struct PretrainResult {
  Checkpoint ckpt;  // best validation loss
  double initial_val_loss = 0.0;
  double val_loss = 0.0;
  double mlm_accuracy = 0.0;
  std::int64_t steps = 0;
};

PretrainResult pretrain_mlm(const Checkpoint& init, const BpeTokenizer& tok,
                            std::span<const std::string> train_lines, std::span<const std::string> val_lines,
                            const TrainConfig& cfg);

// --- supervised training ---

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct EarlyStopResult {
  Checkpoint best;
  int best_epoch = 0;  // 0 = the starting checkpoint
  int epochs_run = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

// Loss of the examples `indices` of the training set under a dropout seed.
using BatchLossFn = std::function<Tensor(const Checkpoint&, std::span<const std::size_t>, std::uint64_t)>;
using ValLossFn = std::function<double(const Checkpoint&)>;

// Shuffled mini-batch epochs with AdamW. Stops once `patience` epochs pass
// without a new best validation loss, or at max_epochs; returns the best.
EarlyStopResult train_epochs(const Checkpoint& start, std::size_t train_size, const TrainConfig& cfg,
                             const BatchLossFn& batch_loss, const ValLossFn& val_loss);

struct Evaluation {
  double loss = 0.0;
  MetricSet metrics;
  std::vector<Target> predictions;
};
Evaluation evaluate(const Checkpoint& ck, std::span<const EncodedExample> data, const TaskSpec& spec,
                    int batch_size = 64);

struct FinetuneResult {
  Checkpoint ckpt;
  Evaluation validation;
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<EpochRecord> history;
};

FinetuneResult finetune(const Checkpoint& ck, std::span<const EncodedExample> train,
                        std::span<const EncodedExample> val, const TaskSpec& spec, const TrainConfig& cfg);

// --- grid search ---

using GridAxis = std::pair<std::string, std::vector<double>>;
using GridPoint = std::vector<std::pair<std::string, double>>;

// Cartesian product, first axis outermost.
std::vector<GridPoint> expand_grid(std::span<const GridAxis> axes);
double grid_value(const GridPoint& p, const std::string& key, double fallback);
nlohmann::json grid_point_json(const GridPoint& p);

struct TrialOutcome {
  Checkpoint ckpt;
  double val_loss = 0.0;
  MetricSet metrics;
};

struct GridTrial {
  GridPoint point;
  double val_loss = 0.0;
  MetricSet metrics;
};

struct GridResult {
  std::size_t best_index = 0;
  Checkpoint best;
  std::vector<GridTrial> table;

  nlohmann::json table_json() const;
};

// Runs every point; lowest validation loss wins, earlier points win ties.
GridResult grid_search(std::span<const GridAxis> axes, const std::function<TrialOutcome(const GridPoint&)>& trial);

// Axis keys: lr, batch_size, max_epochs, warmup_fraction.
TrainConfig apply_grid_point(TrainConfig cfg, const GridPoint& p);

GridResult finetune_grid(const Checkpoint& ck, std::span<const EncodedExample> train,
                         std::span<const EncodedExample> val, const TaskSpec& spec, const TrainConfig& base,
                         std::span<const GridAxis> axes);

}  // namespace gcmp
