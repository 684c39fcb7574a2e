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

#include "gcmp/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "gcmp/error.hpp"
#include "gcmp/kernels.hpp"
#include "gcmp/ops.hpp"
#include "gcmp/rng.hpp"

namespace gcmp {

std::string to_string(DepthStrategy s) {
  switch (s) {
    case DepthStrategy::Random: return "random";
    case DepthStrategy::KeepFirstK: return "keep_first_k";
    case DepthStrategy::KeepLastK: return "keep_last_k";
    case DepthStrategy::EverySecond: return "every_second";
    case DepthStrategy::MinPairwiseDistance: return "min_pairwise_distance";
  }
  return "?";
}

DepthStrategy parse_depth_strategy(const std::string& s) {
  for (auto k : {DepthStrategy::Random, DepthStrategy::KeepFirstK, DepthStrategy::KeepLastK,
                 DepthStrategy::EverySecond, DepthStrategy::MinPairwiseDistance}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown depth strategy '" + s + "'");
}

nlohmann::json DepthPruneStrategy::to_json() const {
  return {{"kind", to_string(kind)},
          {"seed", seed},
          {"metric", metric == DistanceMetric::MAE ? "mae" : "cosine"},
          {"anchor", anchor == Anchor::FirstToken ? "first_token" : "mean_token"}};
}

DepthPruneStrategy DepthPruneStrategy::from_json(const nlohmann::json& j) {
  DepthPruneStrategy s;
  s.kind = parse_depth_strategy(j.value("kind", std::string("keep_first_k")));
  s.seed = j.value("seed", std::uint64_t{0});
  const auto metric = j.value("metric", std::string("mae"));
  if (metric != "mae" && metric != "cosine") throw ValidationError("unknown distance metric '" + metric + "'");
  s.metric = metric == "mae" ? DistanceMetric::MAE : DistanceMetric::Cosine;
  const auto anchor = j.value("anchor", std::string("first_token"));
  if (anchor != "first_token" && anchor != "mean_token") throw ValidationError("unknown anchor '" + anchor + "'");
  s.anchor = anchor == "first_token" ? Anchor::FirstToken : Anchor::MeanToken;
  return s;
}

namespace {

std::vector<std::vector<std::size_t>> chunks(std::size_t n, int batch_size, int max_batches) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size)) {
    if (max_batches > 0 && static_cast<int>(out.size()) == max_batches) break;
    std::vector<std::size_t> idx;
    for (std::size_t i = s; i < std::min(n, s + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

double distance(const std::vector<float>& a, const std::vector<float>& b, DistanceMetric m) {
  if (m == DistanceMetric::MAE) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - b[i]);
    return s / static_cast<double>(a.size());
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 0.0 : 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

}  // namespace

std::vector<std::vector<std::vector<float>>> layer_anchors(const Checkpoint& ck,
                                                           std::span<const EncodedExample> data,
                                                           const TaskSpec& spec, Anchor anchor) {
  const int depth = ck.config.num_layers;
  const auto h = static_cast<std::size_t>(ck.config.hidden);
  std::vector<std::vector<std::vector<float>>> out(static_cast<std::size_t>(depth) + 1);
  for (const auto& idx : chunks(data.size(), 32, 0)) {
    TaskBatch tb = make_batch(data, idx, spec);
    Rng rng(0);
    Tensor x = embed(ck, tb.batch, Mode::Eval, rng);
    const Tensor bias = attention_bias(tb.batch);
    const auto s = static_cast<std::size_t>(tb.batch.seq_len);
    for (int l = 0; l <= depth; ++l) {
      if (l > 0) x = encoder_layer(ck, l - 1, x, bias, Mode::Eval, rng, nullptr);
      auto v = x.data();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        std::vector<float> a(h, 0.0f);
        if (anchor == Anchor::FirstToken) {
          std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(b * s * h), h, a.begin());
        } else {
          double count = 0.0;
          std::vector<double> acc(h, 0.0);
          for (std::size_t t = 0; t < s; ++t) {
            if (tb.batch.mask[b * s + t] == 0.0f) continue;
            count += 1.0;
            for (std::size_t j = 0; j < h; ++j) acc[j] += v[(b * s + t) * h + j];
          }
          for (std::size_t j = 0; j < h; ++j) a[j] = static_cast<float>(acc[j] / std::max(1.0, count));
        }
        out[static_cast<std::size_t>(l)].push_back(std::move(a));
      }
    }
  }
  return out;
}

std::vector<int> select_layers(const Checkpoint& teacher, int keep_k, const DepthPruneStrategy& strategy,
                               std::span<const EncodedExample> calibration, const TaskSpec* spec) {
  const int depth = teacher.config.num_layers;
  if (keep_k < 1 || keep_k > depth) throw ValidationError("keep_k must be in [1, depth]");
  std::vector<int> all(static_cast<std::size_t>(depth));
  std::iota(all.begin(), all.end(), 0);
  switch (strategy.kind) {
    case DepthStrategy::KeepFirstK: return {all.begin(), all.begin() + keep_k};
    case DepthStrategy::KeepLastK: return {all.end() - keep_k, all.end()};
    case DepthStrategy::Random: {
      Rng rng(strategy.seed);
      for (std::size_t i = all.size(); i > 1; --i)
        std::swap(all[i - 1], all[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
      std::vector<int> out(all.begin(), all.begin() + keep_k);
      std::sort(out.begin(), out.end());
      return out;
    }
    case DepthStrategy::EverySecond: {
      std::vector<int> out;
      for (int l = 0; l < depth && static_cast<int>(out.size()) < keep_k; l += 2) out.push_back(l);
      for (int l = 1; l < depth && static_cast<int>(out.size()) < keep_k; l += 2) out.push_back(l);
      std::sort(out.begin(), out.end());
      return out;
    }
    case DepthStrategy::MinPairwiseDistance: break;
  }
  if (calibration.empty() || spec == nullptr) throw ValidationError("pairwise-distance selection needs calibration data");
  const auto anchors = layer_anchors(teacher, calibration, *spec, strategy.anchor);
  const std::size_t n = calibration.size();
  // dist[i][j]: mean distance between the outputs at depths i and j (0 = embeddings).
  auto dist = [&](int i, int j) {
    double s = 0.0;
    for (std::size_t e = 0; e < n; ++e) s += distance(anchors[i][e], anchors[j][e], strategy.metric);
    return s / static_cast<double>(n);
  };
  std::vector<int> kept = all;
  while (static_cast<int>(kept.size()) > keep_k) {
    std::size_t drop = 0;
    double best = 0.0;
    for (std::size_t p = 0; p < kept.size(); ++p) {
      const int below = p == 0 ? 0 : kept[p - 1] + 1;
      const double d = dist(kept[p] + 1, below);
      if (p == 0 || d < best) {
        best = d;
        drop = p;
      }
    }
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  return kept;
}

// --- width ---

namespace {

struct LayerCache {
  std::vector<TaskBatch> batches;
  std::vector<std::vector<Tensor>> inputs;  // [batch][layer], inputs[b][depth] = final hidden
  std::vector<Tensor> bias;
};

LayerCache cache_layers(const Checkpoint& ck, std::span<const EncodedExample> data, const TaskSpec& spec,
                        const SensitivityOptions& opts) {
  LayerCache c;
  for (const auto& idx : chunks(data.size(), opts.batch_size, opts.max_batches)) {
    TaskBatch tb = make_batch(data, idx, spec);
    Rng rng(0);
    std::vector<Tensor> xs{embed(ck, tb.batch, Mode::Eval, rng)};
    Tensor bias = attention_bias(tb.batch);
    for (int l = 0; l < ck.config.num_layers; ++l)
      xs.push_back(encoder_layer(ck, l, xs.back(), bias, Mode::Eval, rng, nullptr));
    c.batches.push_back(std::move(tb));
    c.inputs.push_back(std::move(xs));
    c.bias.push_back(std::move(bias));
  }
  return c;
}

// Example-weighted mean loss when layers from `from` onwards run under `mask`.
double loss_from(const Checkpoint& ck, const LayerCache& c, const TaskSpec& spec, int from, const UnitMask* mask) {
  double total = 0.0, count = 0.0;
  for (std::size_t b = 0; b < c.batches.size(); ++b) {
    Rng rng(0);
    Tensor x = c.inputs[b][static_cast<std::size_t>(from)];
    for (int l = from; l < ck.config.num_layers; ++l) x = encoder_layer(ck, l, x, c.bias[b], Mode::Eval, rng, mask);
    const double n = static_cast<double>(c.batches[b].batch.size);
    total += task_loss(spec, task_head(ck, x, Mode::Eval, rng), c.batches[b]).item() * n;
    count += n;
  }
  return count > 0.0 ? total / count : 0.0;
}

}  // namespace

double calibration_loss(const Checkpoint& ck, std::span<const EncodedExample> calibration, const TaskSpec& spec,
                        const SensitivityOptions& opts, const UnitMask* mask) {
  if (calibration.empty()) throw ValidationError("calibration data is empty");
  double total = 0.0, count = 0.0;
  for (const auto& idx : chunks(calibration.size(), opts.batch_size, opts.max_batches)) {
    TaskBatch tb = make_batch(calibration, idx, spec);
    const double n = static_cast<double>(idx.size());
    total += task_loss(spec, forward(ck, tb.batch, {.mask = mask}), tb).item() * n;
    count += n;
  }
  return total / count;
}

UnitScores unit_sensitivities(const Checkpoint& ck, std::span<const EncodedExample> calibration,
                              const TaskSpec& spec, const SensitivityOptions& opts) {
  if (calibration.empty()) throw ValidationError("calibration data is empty");
  if (opts.batch_size < 1) throw ValidationError("batch_size must be positive");
  if (!(ck.config.head == spec.head)) throw ValidationError("checkpoint head does not match the task");
  const auto& cfg = ck.config;
  const LayerCache cache = cache_layers(ck, calibration, spec, opts);
  UnitScores s;
  s.baseline_loss = loss_from(ck, cache, spec, cfg.num_layers, nullptr);

  struct Unit {
    bool head;
    int layer, index;
  };
  std::vector<Unit> units;
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (opts.heads)
      for (int h = 0; h < cfg.heads[l]; ++h) units.push_back({true, l, h});
    if (opts.neurons)
      for (int n = 0; n < cfg.ffn_dims[l]; ++n) units.push_back({false, l, n});
  }
  std::vector<double> scores(units.size());
  const UnitMask on = UnitMask::all_on(cfg);
  const auto count = static_cast<std::int64_t>(units.size());
#pragma omp parallel for schedule(dynamic) num_threads(kernels::num_threads())
  for (std::int64_t u = 0; u < count; ++u) {
    const Unit& unit = units[static_cast<std::size_t>(u)];
    UnitMask m = on;
    (unit.head ? m.head_gates : m.neuron_gates)[unit.layer][unit.index] = 0.0f;
    scores[static_cast<std::size_t>(u)] = loss_from(ck, cache, spec, unit.layer, &m) - s.baseline_loss;
  }
  if (opts.heads) s.heads.resize(static_cast<std::size_t>(cfg.num_layers));
  if (opts.neurons) s.neurons.resize(static_cast<std::size_t>(cfg.num_layers));
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto& dst = units[u].head ? s.heads : s.neurons;
    dst[static_cast<std::size_t>(units[u].layer)].push_back(scores[u]);
  }
  return s;
}

void WidthPruneConfig::validate(const ModelConfig& cfg) const {
  if (target_total_heads < cfg.num_layers) throw ValidationError("head target leaves a layer without heads");
  if (target_total_heads > cfg.total_heads()) throw ValidationError("head target exceeds the current head count");
  if (target_ffn_neurons < 1) throw ValidationError("neuron target must keep one neuron per layer");
  for (int d : cfg.ffn_dims)
    if (target_ffn_neurons > d) throw ValidationError("neuron target exceeds a layer's width");
  if (heads_per_iteration < 1 || neurons_per_iteration < 0) throw ValidationError("units_per_iteration must be positive");
}

nlohmann::json WidthPruneConfig::to_json() const {
  return {{"target_total_heads", target_total_heads},
          {"target_ffn_neurons", target_ffn_neurons},
          {"heads_per_iteration", heads_per_iteration},
          {"neurons_per_iteration", neurons_per_iteration},
          {"calibration_batch_size", sensitivity.batch_size},
          {"calibration_batches", sensitivity.max_batches}};
}

WidthPruneConfig WidthPruneConfig::from_json(const nlohmann::json& j) {
  WidthPruneConfig c;
  c.target_total_heads = j.at("target_total_heads").get<int>();
  c.target_ffn_neurons = j.at("target_ffn_neurons").get<int>();
  c.heads_per_iteration = j.value("heads_per_iteration", c.heads_per_iteration);
  c.neurons_per_iteration = j.value("neurons_per_iteration", c.neurons_per_iteration);
  c.sensitivity.batch_size = j.value("calibration_batch_size", c.sensitivity.batch_size);
  c.sensitivity.max_batches = j.value("calibration_batches", c.sensitivity.max_batches);
  return c;
}

WidthPruneResult prune_width(const Checkpoint& ck, const WidthPruneConfig& cfg,
                             std::span<const EncodedExample> calibration, const TaskSpec& spec) {
  cfg.validate(ck.config);
  WidthPruneResult r;
  r.ckpt = ck;
  const int neuron_step = cfg.neurons_per_iteration > 0 ? cfg.neurons_per_iteration : std::max(1, ck.config.hidden / 8);
  for (;;) {
    const auto& mc = r.ckpt.config;
    const int heads_over = mc.total_heads() - cfg.target_total_heads;
    bool neurons_over = false;
    for (int d : mc.ffn_dims) neurons_over = neurons_over || d > cfg.target_ffn_neurons;
    if (heads_over <= 0 && !neurons_over) break;

    SensitivityOptions so = cfg.sensitivity;
    so.heads = heads_over > 0;
    so.neurons = neurons_over;
    const UnitScores s = unit_sensitivities(r.ckpt, calibration, spec, so);
    const auto layers = static_cast<std::size_t>(mc.num_layers);
    WidthPruneStep step;
    step.heads_removed.resize(layers);
    step.neurons_removed.resize(layers);
    if (heads_over > 0) {
      std::vector<std::tuple<double, int, int>> order;
      for (int l = 0; l < mc.num_layers; ++l)
        for (int h = 0; h < mc.heads[l]; ++h) order.emplace_back(s.heads[l][h], l, h);
      std::sort(order.begin(), order.end());
      std::vector<int> left = mc.heads;
      int budget = std::min(cfg.heads_per_iteration, heads_over);
      for (const auto& [score, l, h] : order) {
        if (budget == 0) break;
        if (left[l] == 1) continue;
        --left[l];
        --budget;
        step.heads_removed[l].push_back(h);
      }
    }
    if (neurons_over) {
      for (int l = 0; l < mc.num_layers; ++l) {
        const int take = std::min(neuron_step, mc.ffn_dims[l] - cfg.target_ffn_neurons);
        if (take <= 0) continue;
        std::vector<std::pair<double, int>> order;
        for (int n = 0; n < mc.ffn_dims[l]; ++n) order.emplace_back(s.neurons[l][n], n);
        std::sort(order.begin(), order.end());
        for (int i = 0; i < take; ++i) step.neurons_removed[l].push_back(order[static_cast<std::size_t>(i)].second);
        std::sort(step.neurons_removed[l].begin(), step.neurons_removed[l].end());
      }
    }
    for (auto& v : step.heads_removed) std::sort(v.begin(), v.end());
    Checkpoint next = remove_ffn_neurons(remove_heads(r.ckpt, step.heads_removed), step.neurons_removed);
    step.params_after = next.parameter_count();
    if (step.params_after >= r.ckpt.parameter_count()) throw std::logic_error("width pruning made no progress");
    r.ckpt = std::move(next);
    r.steps.push_back(std::move(step));
  }
  return r;
}

Checkpoint random_prune_width(const Checkpoint& ck, const WidthPruneConfig& cfg, std::uint64_t seed) {
  cfg.validate(ck.config);
  const auto& mc = ck.config;
  Rng rng(seed);
  const auto layers = static_cast<std::size_t>(mc.num_layers);
  std::vector<std::vector<int>> heads(layers), neurons(layers);
  // Every layer keeps one head: shuffle the rest and drop the first ones.
  std::vector<std::pair<int, int>> pool;
  for (int l = 0; l < mc.num_layers; ++l)
    for (int h = 0; h < mc.heads[l]; ++h) pool.emplace_back(l, h);
  for (std::size_t i = pool.size(); i > 1; --i)
    std::swap(pool[i - 1], pool[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
  std::vector<int> left = mc.heads;
  int budget = mc.total_heads() - cfg.target_total_heads;
  for (const auto& [l, h] : pool) {
    if (budget == 0) break;
    if (left[l] == 1) continue;
    --left[l];
    --budget;
    heads[l].push_back(h);
  }
  for (int l = 0; l < mc.num_layers; ++l) {
    std::vector<int> ids(static_cast<std::size_t>(mc.ffn_dims[l]));
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(i)))]);
    neurons[l].assign(ids.begin(), ids.begin() + (mc.ffn_dims[l] - cfg.target_ffn_neurons));
    std::sort(neurons[l].begin(), neurons[l].end());
    std::sort(heads[l].begin(), heads[l].end());
  }
  return remove_ffn_neurons(remove_heads(ck, heads), neurons);
}

}  // namespace gcmp
