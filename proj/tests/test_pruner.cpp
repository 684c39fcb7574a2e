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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "gcmp/error.hpp"
#include "gcmp/pruner.hpp"
#include "gcmp/synthetic.hpp"
#include "gcmp/trainer.hpp"

using namespace gcmp;

namespace {

struct Toy {
  BpeTokenizer tok;
  TaskSpec spec;
  std::vector<EncodedExample> train, val;
};

Toy toy_task(int n_train, int n_val, std::uint64_t seed) {
  auto lex = synthetic::Lexicon::make(3, 4, 30, seed);
  synthetic::ClassTaskOptions o;
  o.num_classes = 3;
  o.filler_min = 2;
  o.filler_max = 5;
  auto d = synthetic::single_label_task(lex, n_train, n_val, 0, o, seed);
  Toy t{BpeTokenizer::train(synthetic::texts(d.train), 90), TaskSpec{HeadKind::single_label(3), {}, 20}, {}, {}};
  t.train = encode_examples(t.tok, d.train, t.spec);
  t.val = encode_examples(t.tok, d.validation, t.spec);
  return t;
}

Checkpoint model(const Toy& t, int layers, int hidden, int heads, int ffn, std::uint64_t seed) {
  auto cfg = ModelConfig::uniform(layers, hidden, heads, static_cast<int>(t.tok.vocab_size()), t.spec.max_len, t.spec.head);
  cfg.ffn_dims.assign(static_cast<std::size_t>(layers), ffn);
  return init_model(cfg, seed, t.tok.fingerprint());
}

void scale_param(Checkpoint& ck, const std::string& name, float s) {
  for (float& v : ck.params.at(name).data()) v *= s;
}

void zero_param(Checkpoint& ck, const std::string& name) {
  for (float& v : ck.params.at(name).data()) v = 0.0f;
}

bool strictly_increasing(const std::vector<int>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) return false;
  return true;
}

}  // namespace

TEST_CASE("layer selection strategies") {
  auto t = toy_task(20, 5, 1);
  auto ck = model(t, 12, 16, 2, 16, 1);
  DepthPruneStrategy s;
  CHECK(select_layers(ck, 3, s) == std::vector<int>{0, 1, 2});
  s.kind = DepthStrategy::KeepLastK;
  CHECK(select_layers(ck, 3, s) == std::vector<int>{9, 10, 11});
  s.kind = DepthStrategy::EverySecond;
  CHECK(select_layers(ck, 6, s) == std::vector<int>{0, 2, 4, 6, 8, 10});
  CHECK(select_layers(ck, 3, s) == std::vector<int>{0, 2, 4});
  CHECK(select_layers(ck, 8, s) == std::vector<int>{0, 1, 2, 3, 4, 6, 8, 10});
  s.kind = DepthStrategy::Random;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    s.seed = seed;
    auto a = select_layers(ck, 5, s);
    CHECK(a.size() == 5);
    CHECK(strictly_increasing(a));
    CHECK(a == select_layers(ck, 5, s));
  }
  std::vector<int> all(12);
  for (int i = 0; i < 12; ++i) all[i] = i;
  for (auto kind : {DepthStrategy::Random, DepthStrategy::KeepFirstK, DepthStrategy::KeepLastK,
                    DepthStrategy::EverySecond, DepthStrategy::MinPairwiseDistance}) {
    s.kind = kind;
    CHECK(select_layers(ck, 12, s, t.train, &t.spec) == all);
  }
  s.kind = DepthStrategy::MinPairwiseDistance;
  CHECK_THROWS_AS(select_layers(ck, 3, s), ValidationError);
  s.kind = DepthStrategy::KeepFirstK;
  CHECK_THROWS_AS(select_layers(ck, 0, s), ValidationError);
  CHECK_THROWS_AS(select_layers(ck, 13, s), ValidationError);

  auto j = DepthPruneStrategy{DepthStrategy::MinPairwiseDistance, 4, DistanceMetric::Cosine, Anchor::MeanToken}.to_json();
  auto back = DepthPruneStrategy::from_json(j);
  CHECK(back.kind == DepthStrategy::MinPairwiseDistance);
  CHECK(back.metric == DistanceMetric::Cosine);
  CHECK(back.anchor == Anchor::MeanToken);
}

TEST_CASE("pairwise distance drops a planted duplicate layer first") {
  auto t = toy_task(30, 5, 2);
  auto ck = model(t, 6, 32, 4, 64, 3);
  // Larger weights so the ordinary layers move their input noticeably.
  for (int l = 0; l < 5; ++l)
    for (const char* p : {"attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w", "ffn.w1", "ffn.w2"})
      scale_param(ck, layer_prefix(l) + p, 20.0f);
  // Layer 5 adds nothing to the residual stream, so its output repeats layer 4's.
  for (const char* p : {"attn.o.w", "attn.o.b", "ffn.w2", "ffn.b2"}) zero_param(ck, layer_prefix(5) + p);
  for (auto metric : {DistanceMetric::MAE, DistanceMetric::Cosine})
    for (auto anchor : {Anchor::FirstToken, Anchor::MeanToken}) {
      DepthPruneStrategy s{DepthStrategy::MinPairwiseDistance, 0, metric, anchor};
      CHECK(select_layers(ck, 5, s, t.train, &t.spec) == std::vector<int>{0, 1, 2, 3, 4});
      auto three = select_layers(ck, 3, s, t.train, &t.spec);
      CHECK(three.size() == 3);
      CHECK(strictly_increasing(three));
      CHECK(std::find(three.begin(), three.end(), 5) == three.end());
    }
}

TEST_CASE("unit sensitivities match brute-force masking") {
  auto t = toy_task(40, 10, 3);
  auto ck = model(t, 1, 16, 4, 32, 4);
  for (const char* p : {"attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w", "ffn.w1", "ffn.w2"})
    scale_param(ck, layer_prefix(0) + p, 15.0f);
  scale_param(ck, "head.out.w", 30.0f);
  SensitivityOptions so;
  so.batch_size = 16;
  auto s = unit_sensitivities(ck, t.train, t.spec, so);
  const double base = calibration_loss(ck, t.train, t.spec, so);
  CHECK(s.baseline_loss == doctest::Approx(base).epsilon(1e-12));
  std::vector<std::pair<double, int>> brute, fast;
  for (int h = 0; h < 4; ++h) {
    UnitMask m = UnitMask::all_on(ck.config);
    m.head_gates[0][h] = 0.0f;
    const double d = calibration_loss(ck, t.train, t.spec, so, &m) - base;
    CHECK(std::abs(d - s.heads[0][h]) < 1e-6);
    brute.emplace_back(d, h);
    fast.emplace_back(s.heads[0][h], h);
  }
  std::sort(brute.begin(), brute.end());
  std::sort(fast.begin(), fast.end());
  for (int h = 0; h < 4; ++h) CHECK(brute[h].second == fast[h].second);
  for (int n = 0; n < 32; n += 7) {
    UnitMask m = UnitMask::all_on(ck.config);
    m.neuron_gates[0][n] = 0.0f;
    CHECK(std::abs(calibration_loss(ck, t.train, t.spec, so, &m) - base - s.neurons[0][n]) < 1e-6);
  }

  auto again = unit_sensitivities(ck, t.train, t.spec, so);
  CHECK(again.heads == s.heads);
  CHECK(again.neurons == s.neurons);

  // A head whose output projection ignores it costs nothing to remove.
  auto dead = ck;
  auto w = dead.params.at(layer_prefix(0) + "attn.o.w").data();
  const int hidden = dead.config.hidden, dh = dead.config.head_dim;
  for (int r = 0; r < hidden; ++r)
    for (int c = 2 * dh; c < 3 * dh; ++c) w[r * hidden + c] = 0.0f;
  CHECK(unit_sensitivities(dead, t.train, t.spec, so).heads[0][2] == 0.0);
}

namespace {

// Greedy head removal replayed with full forwards and explicit masks.
Checkpoint oracle_greedy_heads(Checkpoint ck, int target, int per_iter, std::span<const EncodedExample> data,
                               const TaskSpec& spec, const SensitivityOptions& so) {
  while (ck.config.total_heads() > target) {
    const double base = calibration_loss(ck, data, spec, so);
    std::vector<std::tuple<double, int, int>> order;
    for (int l = 0; l < ck.config.num_layers; ++l)
      for (int h = 0; h < ck.config.heads[l]; ++h) {
        UnitMask m = UnitMask::all_on(ck.config);
        m.head_gates[l][h] = 0.0f;
        order.emplace_back(calibration_loss(ck, data, spec, so, &m) - base, l, h);
      }
    std::sort(order.begin(), order.end());
    std::vector<std::vector<int>> drop(static_cast<std::size_t>(ck.config.num_layers));
    std::vector<int> left = ck.config.heads;
    int budget = std::min(per_iter, ck.config.total_heads() - target);
    for (auto [d, l, h] : order) {
      if (budget == 0) break;
      if (left[l] == 1) continue;
      --left[l];
      --budget;
      drop[l].push_back(h);
    }
    for (auto& v : drop) std::sort(v.begin(), v.end());
    ck = remove_heads(ck, drop);
  }
  return ck;
}

}  // namespace

TEST_CASE("greedy width pruning agrees with an independent replay") {
  auto t = toy_task(40, 10, 4);
  auto ck = model(t, 2, 16, 4, 32, 5);
  for (int l = 0; l < 2; ++l)
    for (const char* p : {"attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"}) scale_param(ck, layer_prefix(l) + p, 15.0f);
  scale_param(ck, "head.pool.w", 20.0f);
  scale_param(ck, "head.out.w", 20.0f);
  WidthPruneConfig cfg;
  cfg.target_ffn_neurons = 32;
  cfg.sensitivity.batch_size = 16;

  cfg.target_total_heads = 8;
  auto same = prune_width(ck, cfg, t.train, t.spec);
  CHECK(same.steps.empty());
  CHECK(bit_equal(same.ckpt, ck));

  for (int per_iter : {1, 3}) {
    cfg.target_total_heads = 4;
    cfg.heads_per_iteration = per_iter;
    auto r = prune_width(ck, cfg, t.train, t.spec);
    CHECK(r.ckpt.config.total_heads() == 4);
    auto oracle = oracle_greedy_heads(ck, 4, per_iter, t.train, t.spec, cfg.sensitivity);
    CHECK(oracle.config.heads == r.ckpt.config.heads);
    CHECK(std::abs(calibration_loss(r.ckpt, t.train, t.spec, cfg.sensitivity) -
                   calibration_loss(oracle, t.train, t.spec, cfg.sensitivity)) < 1e-6);
  }

  cfg.target_total_heads = 2;
  cfg.heads_per_iteration = 1;
  cfg.target_ffn_neurons = 5;
  auto r = prune_width(ck, cfg, t.train, t.spec);
  CHECK(r.ckpt.config.heads == std::vector<int>{1, 1});
  CHECK(r.ckpt.config.ffn_dims == std::vector<int>{5, 5});
  std::int64_t prev = ck.parameter_count();
  for (const auto& st : r.steps) {
    CHECK(st.params_after < prev);
    prev = st.params_after;
  }
  CHECK(prev == r.ckpt.parameter_count());
  // hidden / 8 = 2 neurons per iteration: 27 to remove takes 14 rounds.
  CHECK(r.steps.size() == 14);

  cfg.target_total_heads = 1;
  CHECK_THROWS_AS(prune_width(ck, cfg, t.train, t.spec), ValidationError);
  cfg.target_total_heads = 4;
  cfg.target_ffn_neurons = 0;
  CHECK_THROWS_AS(prune_width(ck, cfg, t.train, t.spec), ValidationError);
  cfg.target_ffn_neurons = 33;
  CHECK_THROWS_AS(prune_width(ck, cfg, t.train, t.spec), ValidationError);

  cfg.target_ffn_neurons = 8;
  auto rnd = random_prune_width(ck, cfg, 3);
  CHECK(rnd.config.total_heads() == 4);
  CHECK(rnd.config.ffn_dims == std::vector<int>{8, 8});
  for (int h : rnd.config.heads) CHECK(h >= 1);
  CHECK(bit_equal(rnd, random_prune_width(ck, cfg, 3)));
}

TEST_CASE("informed width pruning beats random pruning") {
  std::vector<double> informed, random;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto t = toy_task(240, 120, 20 + seed);
    TrainConfig tc;
    tc.lr = 1e-3f;
    tc.max_epochs = 20;
    tc.patience = 8;
    tc.seed = seed;
    auto ft = finetune(model(t, 2, 32, 4, 64, seed), t.train, t.val, t.spec, tc).ckpt;
    WidthPruneConfig cfg;
    cfg.target_total_heads = 3;
    cfg.target_ffn_neurons = 16;
    cfg.heads_per_iteration = 2;
    cfg.neurons_per_iteration = 16;
    std::span<const EncodedExample> calib(t.train.data(), 96);
    auto pruned = prune_width(ft, cfg, calib, t.spec).ckpt;
    MESSAGE("unpruned " << *evaluate(ft, t.val, t.spec).metrics.macro_f1);
    informed.push_back(*evaluate(pruned, t.val, t.spec).metrics.macro_f1);
    random.push_back(*evaluate(random_prune_width(ft, cfg, seed), t.val, t.spec).metrics.macro_f1);
  }
  std::sort(informed.begin(), informed.end());
  std::sort(random.begin(), random.end());
  MESSAGE("median informed " << informed[1] << " random " << random[1]);
  CHECK(informed[1] >= random[1]);
}
