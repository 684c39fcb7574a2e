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

#include "gcmp/distiller.hpp"

#include <algorithm>
#include <cmath>

#include "gcmp/error.hpp"
#include "gcmp/ops.hpp"

namespace gcmp {

void DistillConfig::validate() const {
  if (!(temperature > 0.0f) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
  if (!(task_weight >= 0.0f && task_weight <= 1.0f)) throw ValidationError("task_weight must be in [0, 1]");
  train.validate();
}

nlohmann::json DistillConfig::to_json() const {
  return {{"temperature", temperature}, {"task_weight", task_weight}, {"train", train.to_json()}};
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
  DistillConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.task_weight = j.value("task_weight", c.task_weight);
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  c.validate();
  return c;
}

namespace {

// Row-wise softmax(x / T) in double, as a constant tensor.
Tensor softened(const Tensor& logits, std::int64_t k, float temperature) {
  std::vector<float> out(logits.storage().size());
  auto v = logits.data();
  for (std::size_t r = 0; r < out.size() / static_cast<std::size_t>(k); ++r) {
    const std::size_t o = r * static_cast<std::size_t>(k);
    double mx = v[o];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max<double>(mx, v[o + j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp((v[o + j] - mx) / temperature);
    for (std::int64_t j = 0; j < k; ++j) out[o + j] = static_cast<float>(std::exp((v[o + j] - mx) / temperature) / s);
  }
  return Tensor(logits.shape(), std::move(out));
}

Tensor teacher_term(const TaskSpec& spec, const Tensor& teacher, const Tensor& student, const TaskBatch& batch,
                    float temperature) {
  const std::int64_t k = spec.head.num_labels;
  const float t = temperature;
  switch (spec.head.type) {
    case HeadType::SingleLabel: {
      Tensor kl = ops::kl_divergence_with_logits(softened(teacher, k, t), ops::scale(student, 1.0f / t));
      return ops::scale(kl, t * t);
    }
    case HeadType::TokenLabel: {
      const Shape flat{student.numel() / k, k};
      Tensor kl = ops::kl_divergence_with_logits(softened(ops::reshape(teacher, flat), k, t),
                                                 ops::scale(ops::reshape(student, flat), 1.0f / t),
                                                 batch.batch.mask);
      return ops::scale(kl, t * t);
    }
    case HeadType::MultiLabel: {
      std::vector<float> target(teacher.storage().size());
      auto tv = teacher.data();
      for (std::size_t i = 0; i < target.size(); ++i) target[i] = static_cast<float>(1.0 / (1.0 + std::exp(-tv[i] / t)));
      return ops::binary_cross_entropy(ops::scale(student, 1.0f / t), Tensor(teacher.shape(), std::move(target)));
    }
    case HeadType::Regression:
      return ops::mean_squared_error(student, teacher.detach());
    case HeadType::MLM:
      break;
  }
  throw ValidationError("MLM heads are not distilled");
}

}  // namespace

Tensor distill_loss(const TaskSpec& spec, const Tensor& teacher_logits, const Tensor& student_logits,
                    const TaskBatch& batch, const DistillConfig& cfg) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("teacher and student logits differ in shape");
  }
  if (student_logits.rank() == 0 || student_logits.shape().back() != spec.head.num_labels) {
    throw ShapeError("logits do not match the label count");
  }
  if (!(cfg.temperature > 0.0f)) throw ValidationError("temperature must be positive");
  if (!(cfg.task_weight >= 0.0f && cfg.task_weight <= 1.0f)) throw ValidationError("task_weight must be in [0, 1]");
  const float a = cfg.task_weight;
  if (a == 1.0f) return task_loss(spec, student_logits, batch);
  Tensor soft = teacher_term(spec, teacher_logits, student_logits, batch, cfg.temperature);
  if (a == 0.0f) return soft;
  return ops::add(ops::scale(task_loss(spec, student_logits, batch), a), ops::scale(soft, 1.0f - a));
}

TeacherCache TeacherCache::build(const Checkpoint& teacher, std::span<const EncodedExample> data,
                                 const TaskSpec& spec) {
  if (!(teacher.config.head == spec.head)) throw ValidationError("teacher head does not match the task");
  TeacherCache c;
  c.logits.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t idx[1] = {i};
    TaskBatch tb = make_batch(data, idx, spec);
    c.logits.push_back(forward(teacher, tb.batch).storage());
  }
  return c;
}

Tensor TeacherCache::gather(std::span<const std::size_t> indices, const TaskBatch& batch,
                            const TaskSpec& spec) const {
  const std::int64_t k = spec.head.num_labels;
  if (spec.head.type != HeadType::TokenLabel) {
    std::vector<float> out;
    out.reserve(indices.size() * static_cast<std::size_t>(k));
    for (auto i : indices) out.insert(out.end(), logits.at(i).begin(), logits.at(i).end());
    return Tensor({static_cast<std::int64_t>(indices.size()), k}, std::move(out));
  }
  const std::int64_t s = batch.batch.seq_len;
  std::vector<float> out(indices.size() * static_cast<std::size_t>(s * k), 0.0f);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& row = logits.at(indices[r]);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(r * s * k));
  }
  return Tensor({static_cast<std::int64_t>(indices.size()), s, k}, std::move(out));
}

DistillResult distill(const Checkpoint& teacher, const Checkpoint& student, std::span<const EncodedExample> train,
                      std::span<const EncodedExample> val, const TaskSpec& spec, const DistillConfig& cfg,
                      const TeacherCache* cache) {
  cfg.validate();
  if (teacher.tokenizer_hash != student.tokenizer_hash) {
    throw ValidationError("teacher and student use different tokenizers");
  }
  if (!(teacher.config.head == spec.head) || !(student.config.head == spec.head)) {
    throw ValidationError("teacher or student head does not match the task");
  }
  if (val.empty()) throw ValidationError("distillation needs a validation split");
  TeacherCache own;
  if (cache == nullptr) {
    own = TeacherCache::build(teacher, train, spec);
    cache = &own;
  }
  if (cache->logits.size() != train.size()) throw ValidationError("teacher cache does not cover the training set");

  auto batch_loss = [&](const Checkpoint& m, std::span<const std::size_t> idx, std::uint64_t seed) {
    TaskBatch tb = make_batch(train, idx, spec);
    Tensor t = cache->gather(idx, tb, spec);
    return distill_loss(spec, t, forward(m, tb.batch, {.mode = Mode::Train, .seed = seed}), tb, cfg);
  };
  auto val_loss = [&](const Checkpoint& m) { return evaluate(m, val, spec, cfg.train.eval_batch_size).loss; };
  auto es = train_epochs(student, train.size(), cfg.train, batch_loss, val_loss);
  DistillResult r;
  r.validation = evaluate(es.best, val, spec, cfg.train.eval_batch_size);
  r.student = std::move(es.best);
  r.best_epoch = es.best_epoch;
  r.epochs_run = es.epochs_run;
  r.history = std::move(es.history);
  return r;
}

DistillConfig apply_distill_point(DistillConfig cfg, const GridPoint& p) {
  GridPoint rest;
  for (const auto& [k, v] : p) {
    if (k == "temperature") {
      cfg.temperature = static_cast<float>(v);
    } else if (k == "task_weight") {
      cfg.task_weight = static_cast<float>(v);
    } else {
      rest.emplace_back(k, v);
    }
  }
  cfg.train = apply_grid_point(cfg.train, rest);
  cfg.validate();
  return cfg;
}

std::vector<GridAxis> distill_grid_axes() {
  return {{"lr", kDistillLrGrid}, {"temperature", kTemperatureGrid}, {"task_weight", kTaskWeightGrid}};
}

GridResult distill_grid(const Checkpoint& teacher, const Checkpoint& student, std::span<const EncodedExample> train,
                        std::span<const EncodedExample> val, const TaskSpec& spec, const DistillConfig& base,
                        std::span<const GridAxis> axes) {
  const TeacherCache cache = TeacherCache::build(teacher, train, spec);
  return grid_search(axes, [&](const GridPoint& p) {
    auto r = distill(teacher, student, train, val, spec, apply_distill_point(base, p), &cache);
    return TrialOutcome{std::move(r.student), r.validation.loss, r.validation.metrics};
  });
}

bool needs_teacher_assistant(std::int64_t teacher_params, std::int64_t target_params, double ratio) {
  if (teacher_params <= 0 || target_params <= 0) throw ValidationError("parameter counts must be positive");
  return static_cast<double>(teacher_params) / static_cast<double>(target_params) > ratio;
}

DistillResult make_teacher_assistant(const Checkpoint& teacher, const Checkpoint& assistant_init,
                                     std::int64_t target_params, std::span<const EncodedExample> train,
                                     std::span<const EncodedExample> val, const TaskSpec& spec,
                                     const DistillConfig& cfg) {
  const auto tp = teacher.parameter_count();
  const auto ap = assistant_init.parameter_count();
  if (ap >= tp) throw ValidationError("assistant is not smaller than the teacher");
  if (ap <= target_params) throw ValidationError("assistant is not larger than the compression target");
  return distill(teacher, assistant_init, train, val, spec, cfg);
}

}  // namespace gcmp
