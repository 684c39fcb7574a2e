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

// Acceptance checks: one PASS/FAIL line per criterion, exit 0 only when all
// selected criteria pass.
//
//   gcmp_acceptance              all criteria
//   gcmp_acceptance --only 8,12  a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gcmp/container.hpp"
#include "gcmp/graph.hpp"
#include "gcmp/kernels.hpp"
#include "gcmp/ops.hpp"
#include "gcmp/pipeline.hpp"
#include "gcmp/pruner.hpp"
#include "gcmp/synthetic.hpp"
#include "gcmp/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace gcmp;
namespace fs = std::filesystem;
namespace syn = gcmp::synthetic;

namespace {

// --- pinned tolerances ---
constexpr double kGradRelTol = 1e-3;
constexpr int kGradInstances = 20;
constexpr double kGradSeconds = 60.0;
constexpr int kCorpusLines = 1000;
constexpr double kBaseVocabRelTol = 0.01;
constexpr double kMaskingTol = 1e-5;
constexpr double kPassTol = 1e-5;
constexpr int kPassBatches = 100;
constexpr int kMaxRounds = 5;
constexpr double kPayloadLo = 0.24, kPayloadHi = 0.28;
constexpr double kAgreement = 0.98;
constexpr int kAgreementExamples = 500;
constexpr double kRateTol = 0.1;
constexpr double kDeskMarginPp = 0.5;
constexpr double kTeacherFloor = 0.90;
constexpr double kDeskSeconds = 1800.0;
constexpr double kMaskRateTol = 0.01, kSplitTol = 0.02;
constexpr long kMaskTokens = 10000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
  return m;
}

// --- 1 ---
Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_op;
  int instances = 0, ops = 0;
  for (const auto& c : testing::all_op_cases()) {
    Rng rng(1000 + static_cast<std::uint64_t>(ops++));
    for (int i = 0; i < kGradInstances; ++i, ++instances) {
      const auto r = testing::gradcheck(c.fn, c.make_inputs(rng), rng);
      if (!(r.max_rel_error <= worst)) {
        worst = r.max_rel_error;
        worst_op = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && secs < kGradSeconds,
          fmt("%d ops x %d instances, worst rel err %.2e (%s) < %.0e, %.1f s < %.0f s", ops, kGradInstances, worst,
              worst_op.c_str(), kGradRelTol, secs, kGradSeconds)};
}

std::vector<std::string> mixed_corpus(int lines, std::uint64_t seed) {
  auto a = syn::corpus(syn::Lexicon::make(4, 6, 60, seed), lines / 2, seed + 1);
  auto b = syn::corpus(syn::Lexicon::make(4, 6, 60, seed + 50), lines - lines / 2, seed + 2);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// --- 2 ---
Outcome tokenizer_exactness() {
  const auto corpus = mixed_corpus(kCorpusLines, 11);
  const auto tok = BpeTokenizer::train(corpus, 400);
  int roundtrip_fail = 0;
  for (const auto& line : corpus) roundtrip_fail += tok.decode(tok.encode(line)) != line;
  // Pruning corpus: the first lexicon's half only.
  const std::vector<std::string> pruning(corpus.begin(), corpus.begin() + kCorpusLines / 2);
  const auto prune = prune_vocabulary(tok, pruning);
  int mismatches = 0;
  for (const auto& line : pruning) mismatches += prune.remap(tok.encode(line)) != prune.pruned_tokenizer.encode(line);
  return {roundtrip_fail == 0 && mismatches == 0 && prune.removed_count() > 0,
          fmt("%zu lines: %d round-trip failures; %zu/%zu tokens pruned, %d remap mismatches", corpus.size(),
              roundtrip_fail, prune.removed_count(), prune.original_size(), mismatches)};
}

// --- 3 ---
Outcome vocab_accounting() {
  const auto corpus = mixed_corpus(600, 21);
  const auto tok = BpeTokenizer::train(corpus, 300);
  const std::vector<std::string> pruning(corpus.begin(), corpus.begin() + 300);
  const auto prune = prune_vocabulary(tok, pruning);
  const auto removed = static_cast<std::int64_t>(prune.removed_count());
  bool exact = removed > 0;
  for (int hidden : {32, 64, 128}) {
    for (auto head : {HeadKind::single_label(3), HeadKind::mlm()}) {
      const auto cfg = ModelConfig::uniform(2, hidden, 4, static_cast<int>(tok.vocab_size()), 32, head);
      const auto ck = init_model(cfg, 1, tok.fingerprint());
      const auto pruned = reshape_embeddings(ck, prune);
      const auto emb = ck.param("embed.tok").numel() - pruned.param("embed.tok").numel();
      exact = exact && emb == removed * hidden;
      // The tied MLM output bias loses one entry per removed token as well.
      const auto extra = head.type == HeadType::MLM ? removed : 0;
      exact = exact && ck.parameter_count() - pruned.parameter_count() == removed * hidden + extra;
      exact = exact && count_parameters(pruned.config) == pruned.parameter_count();
    }
  }
  // Base-size vocabulary: 2.52% of 64,000 at hidden 512.
  const int vocab = 64000, hidden = 512;
  const auto drop = static_cast<std::int64_t>(std::llround(0.0252 * vocab));
  std::vector<std::string> strings(kSpecialTokens.begin(), kSpecialTokens.end());
  for (int i = static_cast<int>(strings.size()); i < vocab; ++i) strings.push_back("t" + std::to_string(i));
  const BpeTokenizer big(strings, {});
  std::vector<bool> keep(vocab, true);
  for (std::int64_t i = 0; i < drop; ++i) keep[static_cast<std::size_t>(vocab - 1 - i)] = false;
  const auto big_prune = apply_vocab_keep_mask(big, keep);
  const auto big_ck = init_model(ModelConfig::uniform(1, hidden, 8, vocab, 8, HeadKind::single_label(2)), 2);
  const auto big_removed = big_ck.parameter_count() - reshape_embeddings(big_ck, big_prune).parameter_count();
  const double rel = std::abs(static_cast<double>(big_removed) - 826880.0) / 826880.0;
  const bool big_ok = big_removed == drop * hidden && rel <= kBaseVocabRelTol;
  return {exact && big_ok,
          fmt("desk: %lld tokens x hidden {32,64,128} exact=%s; 64k vocab: %lld x 512 = %lld params, %.2f%% from "
              "826,880 (tol %.0f%%)",
              static_cast<long long>(removed), exact ? "yes" : "no", static_cast<long long>(drop),
              static_cast<long long>(big_removed), rel * 100, kBaseVocabRelTol * 100)};
}

// --- 4 ---
Outcome depth_init() {
  const auto cfg = ModelConfig::uniform(6, 32, 4, 120, 32, HeadKind::single_label(3));
  const auto teacher = init_model(cfg, 7);
  int checked = 0, unequal = 0;
  for (int k = 1; k <= 6; ++k) {
    DepthPruneStrategy s;
    s.kind = DepthStrategy::KeepFirstK;
    const auto kept = select_layers(teacher, k, s);
    const auto student = extract_layers(teacher, kept);
    for (int j = 0; j < k; ++j) {
      if (kept[static_cast<std::size_t>(j)] != j) ++unequal;
      for (const auto& [name, t] : teacher.params) {
        if (name.rfind(layer_prefix(j), 0) != 0) continue;
        ++checked;
        unequal += !bit_equal(t, student.param(name));
      }
    }
    for (const auto& [name, t] : teacher.params)
      if (name.rfind("layer.", 0) != 0) unequal += !bit_equal(t, student.param(name));
  }
  return {unequal == 0 && checked > 0, fmt("k = 1..6 of 6 layers: %d layer tensors compared, %d differ", checked, unequal)};
}

struct ToyTask {
  BpeTokenizer tok;
  TaskSpec spec;
  std::vector<EncodedExample> train, val, test;
};

ToyTask toy_task(int classes, int n_train, int n_val, int n_test, std::uint64_t seed, int vocab, int max_len) {
  auto lex = syn::Lexicon::make(classes, 4, 30, seed);
  syn::ClassTaskOptions o;
  o.num_classes = classes;
  o.filler_min = 2;
  o.filler_max = 5;
  auto d = syn::single_label_task(lex, n_train, n_val, n_test, o, seed);
  ToyTask t{BpeTokenizer::train(syn::texts(d.train), static_cast<std::size_t>(vocab)),
            TaskSpec{HeadKind::single_label(classes), {}, max_len}, {}, {}, {}};
  t.train = encode_examples(t.tok, d.train, t.spec);
  t.val = encode_examples(t.tok, d.validation, t.spec);
  t.test = encode_examples(t.tok, d.test, t.spec);
  return t;
}

// --- 5 ---
Outcome width_oracle() {
  auto t = toy_task(3, 40, 10, 0, 3, 90, 20);
  auto cfg = ModelConfig::uniform(1, 16, 4, static_cast<int>(t.tok.vocab_size()), 20, t.spec.head);
  cfg.ffn_dims = {32};
  auto ck = init_model(cfg, 4, t.tok.fingerprint());
  // Larger weights spread the single-unit losses apart.
  for (const char* p : {"attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w", "ffn.w1", "ffn.w2"})
    for (float& v : ck.params.at(layer_prefix(0) + p).data()) v *= 15.0f;
  for (float& v : ck.params.at("head.out.w").data()) v *= 30.0f;
  SensitivityOptions so;
  so.batch_size = 16;
  const auto s = unit_sensitivities(ck, t.train, t.spec, so);
  const double base = calibration_loss(ck, t.train, t.spec, so);
  std::vector<std::pair<double, int>> brute, fast;
  double score_err = 0.0;
  for (int h = 0; h < 4; ++h) {
    auto m = UnitMask::all_on(ck.config);
    m.head_gates[0][static_cast<std::size_t>(h)] = 0.0f;
    const double d = calibration_loss(ck, t.train, t.spec, so, &m) - base;
    score_err = std::max(score_err, std::abs(d - s.heads[0][static_cast<std::size_t>(h)]));
    brute.emplace_back(d, h);
    fast.emplace_back(s.heads[0][static_cast<std::size_t>(h)], h);
  }
  std::sort(brute.begin(), brute.end());
  std::sort(fast.begin(), fast.end());
  bool same_rank = true;
  for (int h = 0; h < 4; ++h) same_rank = same_rank && brute[static_cast<std::size_t>(h)].second == fast[static_cast<std::size_t>(h)].second;
  for (int n = 0; n < 32; ++n) {
    auto m = UnitMask::all_on(ck.config);
    m.neuron_gates[0][static_cast<std::size_t>(n)] = 0.0f;
    score_err = std::max(score_err, std::abs(calibration_loss(ck, t.train, t.spec, so, &m) - base -
                                             s.neurons[0][static_cast<std::size_t>(n)]));
  }
  // Removal vs zero gates on every calibration batch.
  double forward_err = 0.0;
  const std::vector<std::vector<int>> drop_heads{{fast[0].second, fast[1].second}};
  std::vector<std::vector<int>> drop_neurons{{}};
  for (int n = 0; n < 32; n += 3) drop_neurons[0].push_back(n);
  const auto pruned = remove_ffn_neurons(remove_heads(ck, drop_heads), drop_neurons);
  auto mask = UnitMask::all_on(ck.config);
  for (int h : drop_heads[0]) mask.head_gates[0][static_cast<std::size_t>(h)] = 0.0f;
  for (int n : drop_neurons[0]) mask.neuron_gates[0][static_cast<std::size_t>(n)] = 0.0f;
  for (std::size_t start = 0; start < t.train.size(); start += 8) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(t.train.size(), start + 8); ++i) idx.push_back(i);
    const auto b = make_batch(t.train, idx, t.spec).batch;
    ForwardOptions fo;
    fo.mask = &mask;
    forward_err = std::max(forward_err, max_abs_diff(forward(pruned, b), forward(ck, b, fo)));
  }
  return {same_rank && score_err < 1e-6 && forward_err <= kMaskingTol,
          fmt("4 heads ranked %s brute force (max score diff %.1e); pruned vs masked forward %.1e <= %.0e",
              same_rank ? "as" : "unlike", score_err, forward_err, kMaskingTol)};
}

Batch random_batch(Rng& rng, int vocab, std::int64_t size, std::int64_t seq) {
  Batch b;
  b.size = size;
  b.seq_len = seq;
  for (std::int64_t i = 0; i < size; ++i) {
    const auto len = 1 + rng.below(seq);
    for (std::int64_t t = 0; t < seq; ++t) {
      b.ids.push_back(t < len ? static_cast<TokenId>(rng.below(vocab)) : 0);
      b.mask.push_back(t < len ? 1.0f : 0.0f);
    }
  }
  return b;
}

// --- 6 ---
Outcome graph_passes() {
  const auto ck = init_model(ModelConfig::uniform(2, 16, 2, 50, 16, HeadKind::single_label(3)), 5);
  const auto g = export_graph(ck);
  const auto folded = constant_fold(g);
  const auto elim = eliminate_redundant(g);
  const auto fused = fuse_ops(g);
  const auto opt = optimize_graph(g);
  Rng rng(7);
  double fold_err = 0.0, fuse_err = 0.0, opt_err = 0.0;
  bool elim_exact = true;
  for (int i = 0; i < kPassBatches; ++i) {
    const auto b = random_batch(rng, 50, 1 + i % 5, 2 + i % 11);
    const Tensor ref = run_graph(g, b);
    fold_err = std::max(fold_err, max_abs_diff(run_graph(folded, b), ref));
    fuse_err = std::max(fuse_err, max_abs_diff(run_graph(fused, b), ref));
    opt_err = std::max(opt_err, max_abs_diff(run_graph(opt.graph, b), ref));
    elim_exact = elim_exact && bit_equal(run_graph(elim, b), ref);
  }
  bool monotone = folded.node_count() <= g.node_count() && elim.node_count() <= g.node_count() &&
                  fused.node_count() <= g.node_count();
  std::size_t prev = g.node_count();
  GraphProgram cur = g;
  for (int r = 0; r < kMaxRounds; ++r)
    for (auto pass : {constant_fold, eliminate_redundant, fuse_ops}) {
      cur = pass(cur);
      monotone = monotone && cur.node_count() <= prev;
      prev = cur.node_count();
    }
  const bool fixpoint = opt.rounds <= kMaxRounds && optimize_graph(opt.graph).graph == opt.graph;
  const double worst = std::max({fold_err, fuse_err, opt_err});
  return {worst <= kPassTol && elim_exact && monotone && fixpoint,
          fmt("%d batches: fold %.1e, fuse %.1e, pipeline %.1e (<= %.0e), eliminate bit-exact %s; nodes %zu -> %zu "
              "in %d rounds, fixpoint %s",
              kPassBatches, fold_err, fuse_err, opt_err, kPassTol, elim_exact ? "yes" : "no", g.node_count(),
              opt.graph.node_count(), opt.rounds, fixpoint ? "yes" : "no")};
}

// --- 7 ---
Outcome quantization() {
  auto t = toy_task(3, 240, 40, kAgreementExamples, 21, 120, 24);
  const auto cfg = ModelConfig::uniform(2, 64, 4, static_cast<int>(t.tok.vocab_size()), 24, t.spec.head);
  TrainConfig tc;
  tc.lr = 1e-3f;
  tc.max_epochs = 6;
  tc.patience = 6;
  tc.seed = 3;
  const auto ck = finetune(init_model(cfg, 3, t.tok.fingerprint()), t.train, t.val, t.spec, tc).ckpt;
  const auto opt = optimize_graph(export_graph(ck)).graph;
  const auto quant = quantize_dynamic(opt);
  const double ratio = linear_weight_payload_ratio(quant);

  // Reconstruction of every quantized weight against its f32 original.
  bool within = true;
  int tensors = 0;
  for (const auto& [name, q] : quant.initializers) {
    if (!q.quantized) continue;
    ++tensors;
    const auto& f = opt.initializers.at(name).f32;
    const auto back = q.q.dequantize();
    const std::int64_t n = q.q.shape.at(0), k = q.q.shape.at(1);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < k; ++c) {
        const float err = std::abs(back[static_cast<std::size_t>(r * k + c)] - f[static_cast<std::size_t>(c * n + r)]);
        within = within && err <= q.q.scales[static_cast<std::size_t>(r)] / 2 * (1 + 1e-6f);
      }
  }
  int agree = 0;
  for (std::size_t start = 0; start < t.test.size(); start += 50) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(t.test.size(), start + 50); ++i) idx.push_back(i);
    const auto b = make_batch(t.test, idx, t.spec).batch;
    const Tensor ref = run_graph(opt, b), q = run_graph(quant, b);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float* a = ref.data().data() + r * 3;
      const float* c = q.data().data() + r * 3;
      agree += std::max_element(a, a + 3) - a == std::max_element(c, c + 3) - c;
    }
  }
  const double agreement = agree / static_cast<double>(t.test.size());
  return {ratio >= kPayloadLo && ratio <= kPayloadHi && within && tensors > 0 && agreement >= kAgreement &&
              static_cast<int>(t.test.size()) == kAgreementExamples,
          fmt("payload ratio %.4f in [%.2f, %.2f]; %d weights within scale/2: %s; argmax agreement %d/%zu = %.3f >= "
              "%.2f",
              ratio, kPayloadLo, kPayloadHi, tensors, within ? "yes" : "no", agree, t.test.size(), agreement,
              kAgreement)};
}

// --- 8 ---
Outcome efficiency() {
  const auto r = efficiency_from({1409.0, 99.3, 0.0}, {34.0, 0.8, 0.0});
  const auto self = efficiency_from({34.0, 0.8, 0.5}, {34.0, 0.8, 0.5});
  const bool ok = std::abs(r.compression_rate - 41.4) <= kRateTol && std::abs(r.acceleration - 124.1) <= kRateTol &&
                  self.compression_rate == 1.0 && self.acceleration == 1.0;
  return {ok, fmt("1409 MB / 99.3 s vs 34 MB / 0.8 s: compression %.4fx (41.4 +- %.1f), acceleration %.4fx (124.1 "
                  "+- %.1f)",
                  r.compression_rate, kRateTol, r.acceleration, kRateTol)};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// --- 9 ---
Outcome desk_table(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const int classes = 5;
  const auto lex = syn::Lexicon::make(classes, 20, 120, 90);
  // The label class has two topic words; two distractors come from distinct
  // other classes, so the model has to count.
  syn::ClassTaskOptions o;
  o.num_classes = classes;
  o.own_topic_words = 2;
  o.distractor_words = 2;
  o.filler_min = 4;
  o.filler_max = 10;
  const auto ds = syn::single_label_task(lex, 5000, 500, 500, o, 91);
  auto corpus = syn::corpus(lex, 3000, 92);
  for (auto& line : syn::corpus(syn::Lexicon::make(classes, 20, 120, 190), 1500, 93)) corpus.push_back(line);
  CompressionData data{BpeTokenizer::train(corpus, 700), ds.train, ds.validation, ds.test};
  TaskSpec spec{HeadKind::single_label(classes), {}, 32};
  const auto train = encode_examples(data.tokenizer, data.train, spec);
  const auto val = encode_examples(data.tokenizer, data.validation, spec);
  const int vocab = static_cast<int>(data.tokenizer.vocab_size());

  // Desk-scale teacher: 4 layers, hidden 64.
  auto tcfg = ModelConfig::uniform(4, 64, 4, vocab, spec.max_len, spec.head);
  TrainConfig tt;
  tt.lr = 1e-3f;
  tt.batch_size = 32;
  tt.max_epochs = 20;
  tt.patience = 3;
  tt.seed = 1;
  const auto teacher = finetune(init_model(tcfg, 1, data.tokenizer.fingerprint()), train, val, spec, tt);
  const double teacher_f1 = headline_metric(teacher.validation.metrics, spec.head);

  // Reference model of the target shape, pre-trained with MLM on the corpus.
  const ReferenceShape target{2, 4, 64};
  const auto rcfg = shaped_config(ModelConfig::uniform(4, 64, 4, vocab, spec.max_len, HeadKind::mlm()), target);
  TrainConfig pt;
  pt.lr = 1e-3f;
  pt.batch_size = 32;
  pt.max_epochs = 2;
  pt.patience = 2;
  pt.seed = 2;
  pt.eval_interval = 50;
  const std::vector<std::string> pre_train(corpus.begin(), corpus.end() - 300), pre_val(corpus.end() - 300, corpus.end());
  const auto reference = pretrain_mlm(init_model(rcfg, 2, data.tokenizer.fingerprint()), data.tokenizer, pre_train,
                                      pre_val, pt).ckpt;

  CompressionPlan plan;
  plan.task = spec;
  plan.target = target;
  plan.width.heads_per_iteration = 2;
  plan.width.neurons_per_iteration = 32;
  plan.calibration_examples = 256;
  plan.distill.temperature = 2.0f;
  plan.distill.task_weight = 0.5f;
  plan.distill.train.lr = 1e-3f;
  plan.distill.train.batch_size = 32;
  // Same per-run budget for every distillation stage and both baselines.
  plan.distill.train.max_epochs = 10;
  plan.distill.train.patience = 3;
  const std::vector<GridAxis> one_lr{{"lr", {1e-3}}};
  plan.depth_grid = plan.width_grid = plan.kd_grid = plan.finetune_grid = plan.assistant_grid = one_lr;
  plan.recovery.lr = 1e-3f;
  plan.recovery.batch_size = 32;
  plan.recovery.max_epochs = 1;
  plan.recovery.patience = 1;
  plan.measure_latency = false;

  std::vector<double> gc, ft, kd;
  for (std::uint64_t seed : {1, 2, 3}) {
    plan.seed = seed;
    plan.output_dir = work / ("desk_seed" + std::to_string(seed));
    const auto report = gradual_compress(teacher.ckpt, data, plan, &reference);
    gc.push_back(report.final_step().headline);
    for (const auto& b : report.baselines) (b.id == "FT" ? ft : kd).push_back(b.headline);
    std::cout << fmt("    seed %llu: GC %.2f  FT %.2f  KD %.2f  (%.0f s)\n", static_cast<unsigned long long>(seed),
                     gc.back() * 100, ft.back() * 100, kd.back() * 100, seconds_since(t0))
              << std::flush;
  }
  const double mgc = median3(gc), mft = median3(ft), mkd = median3(kd);
  const double secs = seconds_since(t0);
  const bool ok = teacher_f1 >= kTeacherFloor && (mgc - std::max(mft, mkd)) * 100 >= -kDeskMarginPp &&
                  secs <= kDeskSeconds;
  return {ok, fmt("teacher val macro-F1 %.2f%% (>= %.0f%%); median test macro-F1 GC %.2f, FT %.2f, KD %.2f, GC - "
                  "max = %+.2f p.p. (>= -%.1f); %.0f s (<= %.0f s)",
                  teacher_f1 * 100, kTeacherFloor * 100, mgc * 100, mft * 100, mkd * 100,
                  (mgc - std::max(mft, mkd)) * 100, kDeskMarginPp, secs, kDeskSeconds)};
}

// --- 10 ---
Outcome stopping_and_grids() {
  const auto start = init_model(ModelConfig::uniform(1, 4, 1, 8, 4, HeadKind::single_label(2)), 1);
  TrainConfig cfg;
  cfg.lr = 0.01f;
  cfg.batch_size = 4;
  cfg.patience = 3;
  cfg.max_epochs = 20;
  int calls = 0;
  auto batch_loss = [](const Checkpoint& m, std::span<const std::size_t>, std::uint64_t) {
    return ops::sum(m.param("embed.tok"));
  };
  // Validation loss after epoch e is 1 + e.
  auto worsening = [&](const Checkpoint&) { return 1.0 + calls++; };
  const auto r = train_epochs(start, 8, cfg, batch_loss, worsening);
  calls = 0;
  // Worsens, improves at epoch 3, then worsens again.
  auto once = [&](const Checkpoint&) {
    const int e = calls++;
    return e == 3 ? 0.5 : 1.0 + e;
  };
  const auto r1 = train_epochs(start, 8, cfg, batch_loss, once);
  calls = 0;
  auto improving = [&](const Checkpoint&) { return 100.0 - calls++; };
  const auto r2 = train_epochs(start, 8, cfg, batch_loss, improving);
  const auto points = expand_grid(distill_grid_axes());
  std::set<std::vector<double>> distinct;
  for (const auto& p : points) {
    std::vector<double> v;
    for (const auto& [k, x] : p) v.push_back(x);
    distinct.insert(v);
  }
  const bool stop_ok = r.epochs_run == 4 && r.best_epoch == 1 && r1.epochs_run == 6 && r1.best_epoch == 3 &&
                       r2.epochs_run == 20;
  const bool grid_ok = points.size() == 60 && distinct.size() == 60 && kDistillLrGrid.size() == 5 &&
                       kTemperatureGrid.size() == 4 && kTaskWeightGrid.size() == 3;
  return {stop_ok && grid_ok,
          fmt("worsening: stop after %d epochs (best %d); one improvement: %d epochs (best %d); improving: %d epochs; "
              "distillation grid %zu points, %zu distinct",
              r.epochs_run, r.best_epoch, r1.epochs_run, r1.best_epoch, r2.epochs_run, points.size(), distinct.size())};
}

// --- 11 ---
Outcome masking() {
  Rng rng(1);
  std::vector<std::vector<TokenId>> seqs;
  for (int i = 0; i < 700; ++i) {
    std::vector<TokenId> s{SpecialIds::kCls};
    for (int j = 0; j < 100; ++j) s.push_back(static_cast<TokenId>(5 + rng.below(95)));
    s.push_back(SpecialIds::kSep);
    seqs.push_back(s);
  }
  const Batch b = Batch::from_sequences(seqs);
  const auto m = mlm_mask(b, 0.15f, 100, 3);
  long eligible = 0, selected = 0, masked = 0, random = 0, kept = 0, special_hit = 0;
  for (std::size_t i = 0; i < m.action.size(); ++i) {
    const bool special = BpeTokenizer::is_special(b.ids[i]);
    eligible += !special;
    if (m.action[i] == MaskAction::None) continue;
    special_hit += special;
    ++selected;
    masked += m.action[i] == MaskAction::Masked;
    random += m.action[i] == MaskAction::Random;
    kept += m.action[i] == MaskAction::Kept;
  }
  const double rate = selected / double(eligible);
  const double fm = masked / double(selected), fr = random / double(selected), fk = kept / double(selected);
  const bool ok = eligible >= kMaskTokens && special_hit == 0 && std::abs(rate - 0.15) <= kMaskRateTol &&
                  std::abs(fm - 0.8) <= kSplitTol && std::abs(fr - 0.1) <= kSplitTol && std::abs(fk - 0.1) <= kSplitTol;
  return {ok, fmt("%ld tokens: selected %.4f (0.15 +- %.2f); mask/random/keep %.3f/%.3f/%.3f (+- %.2f)", eligible, rate,
                  kMaskRateTol, fm, fr, fk, kSplitTol)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

// --- 12 ---
Outcome determinism(const fs::path& work) {
  auto t = toy_task(3, 120, 30, 40, 5, 160, 20);
  const auto lex = syn::Lexicon::make(3, 4, 30, 5);
  CompressionData data{t.tok, {}, {}, {}};
  syn::ClassTaskOptions o;
  o.num_classes = 3;
  o.filler_min = 2;
  o.filler_max = 5;
  const auto ds = syn::single_label_task(lex, 120, 30, 40, o, 5);
  data.train = ds.train;
  data.validation = ds.validation;
  data.test = ds.test;
  auto cfg = ModelConfig::uniform(4, 16, 4, static_cast<int>(t.tok.vocab_size()), t.spec.max_len, t.spec.head);
  cfg.ffn_dims.assign(4, 32);
  TrainConfig tc;
  tc.lr = 1e-3f;
  tc.max_epochs = 4;
  tc.patience = 4;
  const auto teacher = finetune(init_model(cfg, 1, t.tok.fingerprint()), t.train, t.val, t.spec, tc).ckpt;

  CompressionPlan plan;
  plan.task = t.spec;
  plan.target = {2, 4, 16};
  plan.width.neurons_per_iteration = 8;
  plan.distill.train.lr = 1e-3f;
  plan.distill.train.max_epochs = 2;
  plan.distill.train.patience = 2;
  const std::vector<GridAxis> one_lr{{"lr", {1e-3}}};
  plan.depth_grid = plan.width_grid = one_lr;
  plan.recovery.max_epochs = 1;
  plan.recovery.patience = 1;
  plan.measure_latency = false;
  plan.seed = 7;
  plan.output_dir = work / "determinism";

  const int threads = kernels::num_threads();
  kernels::set_num_threads(1);
  fs::remove_all(plan.output_dir);
  gradual_compress(teacher, data, plan);
  const auto first = snapshot(plan.output_dir);
  fs::remove_all(plan.output_dir);
  gradual_compress(teacher, data, plan);
  const auto second = snapshot(plan.output_dir);
  kernels::set_num_threads(threads);
  int differing = 0;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    differing += it == second.end() || it->second != bytes;
  }
  const bool ok = first.size() == second.size() && differing == 0 && first.count("report.json") == 1;
  return {ok, fmt("two single-threaded runs, seed 7: %zu files each (report + artifacts), %d differ", first.size(),
                  differing)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "gcmp_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"tokenizer exactness", tokenizer_exactness},
      {"vocabulary-pruning accounting", vocab_accounting},
      {"depth-prune initialization", depth_init},
      {"width-pruning oracle", width_oracle},
      {"graph passes", graph_passes},
      {"quantization", quantization},
      {"efficiency accounting", efficiency},
      {"desk-scale GC vs FT/KD", [&] { return desk_table(work); }},
      {"early stopping and grids", stopping_and_grids},
      {"MLM masking statistics", masking},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << std::setw(2) << id << " " << criteria[i].first << ": "
              << o.detail << "\n"
              << std::flush;
  }
  std::cout << ran - failed << "/" << ran << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
