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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/data.hpp"
#include "gcmp/distiller.hpp"
#include "gcmp/graph.hpp"
#include "gcmp/metrics.hpp"
#include "gcmp/pruner.hpp"
#include "gcmp/tokenizer.hpp"
#include "gcmp/trainer.hpp"

namespace gcmp {

// Target size of a compressed model. Heads are a total over all layers and are
// spread as evenly as possible (lower layers get the remainder).
struct ReferenceShape {
  int layers = 0;
  int total_heads = 0;
  int ffn = 0;  // per layer

  static ReferenceShape small() { return {6, 24, 1024}; }
  static ReferenceShape tiny() { return {3, 12, 512}; }
  static ReferenceShape of(const ModelConfig& cfg);

  std::vector<int> heads_per_layer() const;
  void validate() const;
  nlohmann::json to_json() const;
  // Either "small", "tiny" or {"layers", "total_heads", "ffn"}.
  static ReferenceShape from_json(const nlohmann::json& j);
  bool operator==(const ReferenceShape&) const = default;
};

// `base` with the depth, head counts and FFN width of `shape` (hidden size,
// head size, vocabulary and head kind unchanged).
ModelConfig shaped_config(const ModelConfig& base, const ReferenceShape& shape);

// Keeps the first layers, the lowest-index heads and neurons. Used to seed
// assistants and for unit-order-free shrinking in tests.
Checkpoint truncate_to_shape(const Checkpoint& ck, const ReferenceShape& shape);

// Grid axes in plan files: [{"name": "lr", "values": [...]}, ...].
nlohmann::json grid_axes_to_json(std::span<const GridAxis> axes);
std::vector<GridAxis> grid_axes_from_json(const nlohmann::json& j);

// Default grids: lr x temperature x task weight for distillation, lr for
// fine-tuning.
std::vector<GridAxis> default_distill_grid();
std::vector<GridAxis> default_finetune_grid();

inline TrainConfig recovery_defaults() {
  TrainConfig c;
  c.max_epochs = 3;
  return c;
}

struct CompressionPlan {
  // Files, resolved against the plan file's directory when relative.
  std::filesystem::path teacher, tokenizer, train_data, validation_data, test_data;
  std::filesystem::path reference_pretrained;  // optional, enables the FT / KD baselines
  std::filesystem::path output_dir;

  TaskSpec task;
  ReferenceShape target;
  std::optional<ReferenceShape> assistant;  // default: midway between teacher and target
  double assistant_ratio = kAssistantTriggerRatio;

  DepthPruneStrategy depth;
  WidthPruneConfig width;  // targets are filled from `target`
  int calibration_examples = 256;

  DistillConfig distill;
  std::vector<GridAxis> assistant_grid = default_distill_grid();
  std::vector<GridAxis> depth_grid = default_distill_grid();
  std::vector<GridAxis> width_grid = default_distill_grid();
  std::vector<GridAxis> finetune_grid = default_finetune_grid();  // FT baseline
  std::vector<GridAxis> kd_grid = default_distill_grid();         // KD baseline
  TrainConfig recovery = recovery_defaults();  // S1 fine-tuning, 1 to 3 epochs
  double recovery_threshold_pp = 0.1;  // fine-tune when the metric drops by more

  std::uint64_t seed = 0;
  bool measure_latency = true;
  int latency_batch = 32;

  void validate() const;
  // Copy with `seed` pushed into every training and selection config.
  CompressionPlan seeded() const;
  nlohmann::json to_json() const;
  static CompressionPlan from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static CompressionPlan load(const std::filesystem::path& path);
};

struct StepRecord {
  std::string id;     // "teacher", "S0" ... "S4.2", "FT", "KD"
  std::string label;  // table row label
  bool executed = true;
  std::string artifact;  // file name inside the output directory
  std::int64_t params = 0;
  std::int64_t size_bytes = 0;
  int vocab_size = 0;
  MetricSet metrics;
  double headline = 0.0;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct StepTiming {
  std::string id;
  LatencyStats latency;
};

struct CompressionReport {
  std::string headline_metric;
  std::string eval_split;
  StepRecord teacher;
  std::vector<StepRecord> steps;      // S0, S1, S2, S3, S4.1, S4.2
  std::vector<StepRecord> baselines;  // FT, KD when built
  std::vector<StepTiming> timings;    // not part of to_json(): wall-clock is not reproducible

  const StepRecord& final_step() const { return steps.back(); }
  // Deterministic; latencies live in timings_json().
  nlohmann::json to_json() const;
  nlohmann::json timings_json() const;
  // Aligned text, one row per step (teacher, steps 0-4, then baselines).
  std::string table() const;
};

struct CompressionData {
  BpeTokenizer tokenizer;
  std::vector<Example> train, validation, test;
};

CompressionData load_compression_data(const CompressionPlan& plan);

struct StepArtifacts {
  Checkpoint ckpt;
  BpeTokenizer tokenizer;
};

// Individual stages, exposed so a stored artifact can be replayed.
// S1: prune the vocabulary to the training corpus, fine-tune when the
// validation metric drops by more than the plan's threshold.
struct VocabStepResult {
  StepArtifacts model;
  VocabPruneResult prune;
  double metric_before = 0.0, metric_after_prune = 0.0;
  int recovery_epochs = 0;
};
VocabStepResult vocab_step(const Checkpoint& model, const BpeTokenizer& tok, const CompressionData& data,
                           const CompressionPlan& plan);

// S2: select target.layers blocks of `teacher`, then distil from it.
GridResult depth_step(const Checkpoint& teacher, std::span<const EncodedExample> train,
                      std::span<const EncodedExample> val, const CompressionPlan& plan, std::vector<int>* kept = nullptr);
// S3: sensitivity width pruning of `student` to the target, then re-distil.
GridResult width_step(const Checkpoint& teacher, const Checkpoint& student, std::span<const EncodedExample> train,
                      std::span<const EncodedExample> val, const CompressionPlan& plan,
                      WidthPruneResult* pruned = nullptr);

// Runs S0 .. S4.2 and, with a reference checkpoint, the baselines. Every
// artifact, report.json, report.txt and timings.json are written to
// plan.output_dir. On failure the artifacts written so far stay and
// failure.json records the stage.
CompressionReport gradual_compress(const Checkpoint& teacher, const CompressionData& data,
                                   const CompressionPlan& plan, const Checkpoint* reference = nullptr);
CompressionReport gradual_compress(const CompressionPlan& plan);

struct Baselines {
  Checkpoint ft, kd;
  BpeTokenizer kd_tokenizer;
};
// FT: grid-searched fine-tuning of the reference model with a fresh task head.
// KD: the reference model with its vocabulary pruned to the training corpus,
// distilled directly from the (equally pruned) teacher.
Baselines build_baselines(const Checkpoint& teacher, const Checkpoint& reference, const CompressionData& data,
                          const CompressionPlan& plan);

// Graph / checkpoint evaluation on encoded examples.
Evaluation evaluate_graph(const GraphProgram& g, std::span<const EncodedExample> data, const TaskSpec& spec,
                          int batch_size = 64);

// --- efficiency ---

struct EfficiencyReport {
  std::int64_t size_bytes = 0;
  std::int64_t param_count = 0;
  double mean_latency_seconds = 0.0;
  double compression_rate = 0.0;  // teacher size / artifact size
  double acceleration = 0.0;      // teacher latency / artifact latency
  double performance_delta_pp = 0.0;

  nlohmann::json to_json() const;
};

struct EfficiencyInputs {
  double size = 0.0;
  double latency_seconds = 0.0;
  double metric = 0.0;  // headline, in [0, 1]
};

// Exact quotients of the measured quantities.
EfficiencyReport efficiency_from(const EfficiencyInputs& teacher, const EfficiencyInputs& artifact);
// Arithmetic means of per-task rates (the cross-task summary).
struct EfficiencySummary {
  double compression_rate = 0.0;
  double acceleration = 0.0;
  double performance_delta_pp = 0.0;
};
EfficiencySummary average_efficiency(std::span<const EfficiencyReport> per_task);

// Loads a checkpoint or graph container; checkpoints run as their exported
// (unoptimised) graph. Both are timed on `sample` (batch 32 protocol).
struct LoadedArtifact {
  GraphProgram graph;
  std::int64_t size_bytes = 0;
  std::int64_t params = 0;
};
LoadedArtifact load_artifact(const std::filesystem::path& path);
std::int64_t graph_parameter_count(const GraphProgram& g);

EfficiencyReport efficiency_stats(const std::filesystem::path& artifact, const std::filesystem::path& teacher,
                                  const Batch& sample, int warmup = 5, int runs = 30);

}  // namespace gcmp
