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
#include <vector>

#include "gcmp/data.hpp"
#include "gcmp/model.hpp"
#include "gcmp/trainer.hpp"

namespace gcmp {

struct DistillConfig {
  float temperature = 1.0f;
  float task_weight = 0.5f;  // weight of the supervised loss; 1 - task_weight on the teacher term
  TrainConfig train;

  void validate() const;
  nlohmann::json to_json() const;
  static DistillConfig from_json(const nlohmann::json& j);
};

// a * task_loss + (1 - a) * teacher term, where the teacher term is
//   SingleLabel / TokenLabel: T^2 * KL(softmax(t/T) || softmax(s/T)), mean over scored rows
//   MultiLabel: BCE between sigmoid(s/T) and target sigmoid(t/T), mean over labels
//   Regression: MSE(s, t), no temperature.
// For token tasks rows are positions with a real token.
Tensor distill_loss(const TaskSpec& spec, const Tensor& teacher_logits, const Tensor& student_logits,
                    const TaskBatch& batch, const DistillConfig& cfg);

// Teacher logits per example, computed once in eval mode (one example at a
// time so the values do not depend on batch composition).
struct TeacherCache {
  std::vector<std::vector<float>> logits;  // per example: k or (len x k)

  static TeacherCache build(const Checkpoint& teacher, std::span<const EncodedExample> data, const TaskSpec& spec);
  // Stacked for a batch, padded positions filled with a uniform row.
  Tensor gather(std::span<const std::size_t> indices, const TaskBatch& batch, const TaskSpec& spec) const;
};

struct DistillResult {
  Checkpoint student;
  Evaluation validation;
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<EpochRecord> history;
};

DistillResult distill(const Checkpoint& teacher, const Checkpoint& student, std::span<const EncodedExample> train,
                      std::span<const EncodedExample> val, const TaskSpec& spec, const DistillConfig& cfg,
                      const TeacherCache* cache = nullptr);

// Axis keys: lr, temperature, task_weight (plus the training keys of
// apply_grid_point).
DistillConfig apply_distill_point(DistillConfig cfg, const GridPoint& p);
std::vector<GridAxis> distill_grid_axes();

GridResult distill_grid(const Checkpoint& teacher, const Checkpoint& student, std::span<const EncodedExample> train,
                        std::span<const EncodedExample> val, const TaskSpec& spec, const DistillConfig& base,
                        std::span<const GridAxis> axes);

inline constexpr double kAssistantTriggerRatio = 16.0;
bool needs_teacher_assistant(std::int64_t teacher_params, std::int64_t target_params,
                             double ratio = kAssistantTriggerRatio);

// Distils `teacher` into `assistant_init` (already of assistant shape).
DistillResult make_teacher_assistant(const Checkpoint& teacher, const Checkpoint& assistant_init,
                                     std::int64_t target_params, std::span<const EncodedExample> train,
                                     std::span<const EncodedExample> val, const TaskSpec& spec,
                                     const DistillConfig& cfg);

}  // namespace gcmp
