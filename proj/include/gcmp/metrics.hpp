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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/data.hpp"

namespace gcmp {

struct F1Counts {
  long tp = 0, fp = 0, fn = 0;
  // 1 when there is nothing to find and nothing was predicted.
  double f1() const;
  F1Counts& operator+=(const F1Counts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn;
    return *this;
  }
};

// Only the metrics valid for the task's head kind are set.
struct MetricSet {
  std::optional<double> micro_f1, macro_f1, accuracy, mae, entity_micro_f1, entity_macro_f1;

  nlohmann::json to_json() const;
  static MetricSet from_json(const nlohmann::json& j);
};

struct EntitySpan {
  std::string type;
  int begin = 0, end = 0;  // [begin, end)
  auto operator<=>(const EntitySpan&) const = default;
};

// BIO chunks, conlleval style: an I- tag that does not continue a chunk of the
// same type opens a new one. Tags other than O / B-x / I-x are rejected.
std::vector<EntitySpan> bio_spans(std::span<const std::string> tags);

double round_half_away(double v);

// Micro = pooled counts; macro = unweighted mean of per-label F1 over labels
// that occur in gold or predictions.
MetricSet compute_metrics(std::span<const Target> pred, std::span<const Target> gold, HeadKind head);

// Pooled counts per label (or entity type) behind the micro scores.
std::map<std::string, F1Counts> label_counts(std::span<const Target> pred, std::span<const Target> gold,
                                             HeadKind head);

struct GroupedMetrics {
  MetricSet overall;
  std::map<std::string, MetricSet> groups;

  nlohmann::json to_json() const;
};
GroupedMetrics grouped_metrics(std::span<const Target> pred, std::span<const Target> gold,
                               std::span<const std::string> groups, HeadKind head);

// Macro-F1 for classification, rounded accuracy for regression, entity
// micro-F1 for token tasks.
double headline_metric(const MetricSet& m, HeadKind head);
std::string headline_metric_name(HeadKind head);

}  // namespace gcmp
