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

#include "gcmp/metrics.hpp"

#include <cmath>
#include <set>

#include "gcmp/error.hpp"

namespace gcmp {

double F1Counts::f1() const {
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

nlohmann::json MetricSet::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("micro_f1", micro_f1);
  put("macro_f1", macro_f1);
  put("accuracy", accuracy);
  put("mae", mae);
  put("entity_micro_f1", entity_micro_f1);
  put("entity_macro_f1", entity_macro_f1);
  return j;
}

MetricSet MetricSet::from_json(const nlohmann::json& j) {
  MetricSet m;
  auto get = [&](const char* k, std::optional<double>& v) {
    if (j.contains(k)) v = j.at(k).get<double>();
  };
  get("micro_f1", m.micro_f1);
  get("macro_f1", m.macro_f1);
  get("accuracy", m.accuracy);
  get("mae", m.mae);
  get("entity_micro_f1", m.entity_micro_f1);
  get("entity_macro_f1", m.entity_macro_f1);
  return m;
}

std::vector<EntitySpan> bio_spans(std::span<const std::string> tags) {
  std::vector<EntitySpan> spans;
  std::optional<EntitySpan> open;
  auto close = [&](int at) {
    if (open) {
      open->end = at;
      spans.push_back(*open);
      open.reset();
    }
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& t = tags[i];
    if (t == "O") {
      close(i);
      continue;
    }
    if (t.size() < 3 || t[1] != '-' || (t[0] != 'B' && t[0] != 'I')) {
      throw ValidationError("unknown tag scheme: '" + t + "' is not O, B-x or I-x");
    }
    const std::string type = t.substr(2);
    if (t[0] == 'I' && open && open->type == type) continue;
    close(i);
    open = EntitySpan{type, i, i};
  }
  close(static_cast<int>(tags.size()));
  return spans;
}

double round_half_away(double v) { return std::round(v); }

std::map<std::string, F1Counts> label_counts(std::span<const Target> pred, std::span<const Target> gold,
                                             HeadKind head) {
  if (pred.size() != gold.size()) throw ValidationError("prediction and gold counts differ");
  std::map<std::string, F1Counts> c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    switch (head.type) {
      case HeadType::SingleLabel: {
        const int g = gold[i].label, p = pred[i].label;
        if (g == p) {
          ++c[std::to_string(g)].tp;
        } else {
          ++c[std::to_string(p)].fp;
          ++c[std::to_string(g)].fn;
        }
        break;
      }
      case HeadType::MultiLabel: {
        const std::set<int> g(gold[i].labels.begin(), gold[i].labels.end());
        const std::set<int> p(pred[i].labels.begin(), pred[i].labels.end());
        for (int l : p) (g.count(l) ? c[std::to_string(l)].tp : c[std::to_string(l)].fp)++;
        for (int l : g)
          if (!p.count(l)) ++c[std::to_string(l)].fn;
        break;
      }
      case HeadType::TokenLabel: {
        if (pred[i].tags.size() != gold[i].tags.size()) throw ValidationError("tag sequence lengths differ");
        const auto gs = bio_spans(gold[i].tags), ps = bio_spans(pred[i].tags);
        const std::set<EntitySpan> gset(gs.begin(), gs.end()), pset(ps.begin(), ps.end());
        for (const auto& s : pset) (gset.count(s) ? c[s.type].tp : c[s.type].fp)++;
        for (const auto& s : gset)
          if (!pset.count(s)) ++c[s.type].fn;
        break;
      }
      default:
        throw ValidationError("label counts need a classification or token task");
    }
  }
  return c;
}

MetricSet compute_metrics(std::span<const Target> pred, std::span<const Target> gold, HeadKind head) {
  if (pred.size() != gold.size()) throw ValidationError("prediction and gold counts differ");
  MetricSet m;
  if (head.type == HeadType::Regression) {
    double abs_err = 0.0;
    long hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      abs_err += std::abs(pred[i].score - gold[i].score);
      hits += round_half_away(pred[i].score) == round_half_away(gold[i].score);
    }
    const double n = gold.empty() ? 1.0 : static_cast<double>(gold.size());
    m.mae = abs_err / n;
    m.accuracy = gold.empty() ? 1.0 : static_cast<double>(hits) / n;
    return m;
  }
  const auto counts = label_counts(pred, gold, head);
  F1Counts pooled;
  double macro = 0.0;
  for (const auto& [label, c] : counts) {
    pooled += c;
    macro += c.f1();
  }
  macro = counts.empty() ? 1.0 : macro / static_cast<double>(counts.size());
  if (head.type == HeadType::TokenLabel) {
    m.entity_micro_f1 = pooled.f1();
    m.entity_macro_f1 = macro;
    return m;
  }
  m.micro_f1 = pooled.f1();
  m.macro_f1 = macro;
  if (head.type == HeadType::SingleLabel) {
    long hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) hits += pred[i].label == gold[i].label;
    m.accuracy = gold.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(gold.size());
  }
  return m;
}

nlohmann::json GroupedMetrics::to_json() const {
  nlohmann::json g = nlohmann::json::object();
  for (const auto& [k, v] : groups) g[k] = v.to_json();
  return {{"overall", overall.to_json()}, {"groups", g}};
}

GroupedMetrics grouped_metrics(std::span<const Target> pred, std::span<const Target> gold,
                               std::span<const std::string> groups, HeadKind head) {
  if (groups.size() != gold.size()) throw ValidationError("need one group tag per example");
  GroupedMetrics out;
  out.overall = compute_metrics(pred, gold, head);
  std::map<std::string, std::pair<std::vector<Target>, std::vector<Target>>> split;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto& [p, g] = split[groups[i]];
    p.push_back(pred[i]);
    g.push_back(gold[i]);
  }
  for (const auto& [name, pg] : split) out.groups[name] = compute_metrics(pg.first, pg.second, head);
  return out;
}

double headline_metric(const MetricSet& m, HeadKind head) {
  std::optional<double> v;
  switch (head.type) {
    case HeadType::SingleLabel:
    case HeadType::MultiLabel: v = m.macro_f1; break;
    case HeadType::Regression: v = m.accuracy; break;
    case HeadType::TokenLabel: v = m.entity_micro_f1; break;
    case HeadType::MLM: break;
  }
  if (!v) throw ValidationError("metric set lacks the headline metric for " + to_string(head.type));
  return *v;
}

std::string headline_metric_name(HeadKind head) {
  switch (head.type) {
    case HeadType::SingleLabel:
    case HeadType::MultiLabel: return "macro_f1";
    case HeadType::Regression: return "accuracy";
    case HeadType::TokenLabel: return "entity_micro_f1";
    case HeadType::MLM: break;
  }
  return "mlm_accuracy";
}

}  // namespace gcmp
