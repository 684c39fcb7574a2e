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
#include <filesystem>

#include "gcmp/error.hpp"
#include "gcmp/graph.hpp"
#include "gcmp/kernels.hpp"
#include "gcmp/synthetic.hpp"
#include "gcmp/trainer.hpp"

using namespace gcmp;

namespace {

Checkpoint toy_model(HeadKind head, int layers, int hidden, int heads, int vocab, std::uint64_t seed) {
  auto cfg = ModelConfig::uniform(layers, hidden, heads, vocab, 16, head);
  return init_model(cfg, seed, "toy");
}

// Random ids, random lengths >= 1 with trailing padding.
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

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - b.data()[i]));
  return m;
}

const HeadKind kHeads[] = {HeadKind::mlm(), HeadKind::single_label(3), HeadKind::multi_label(4),
                           HeadKind::regression(), HeadKind::token_label(5)};

}  // namespace

TEST_CASE("exported graph matches eval forward for every head kind") {
  for (const auto& head : kHeads) {
    CAPTURE(to_string(head.type));
    auto ck = toy_model(head, 2, 16, 4, 40, 3);
    auto g = export_graph(ck);
    Rng rng(11);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      auto b = random_batch(rng, 40, 1 + i % 4, 1 + i % 9);
      worst = std::max(worst, max_abs_diff(run_graph(g, b), forward(ck, b)));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("executor and forward agree on 100 random batches, passes preserve outputs") {
  auto ck = toy_model(HeadKind::single_label(3), 2, 16, 2, 50, 5);
  auto g = export_graph(ck);
  auto folded = constant_fold(g);
  auto elim = eliminate_redundant(g);
  auto fused = fuse_ops(eliminate_redundant(folded));
  auto opt = optimize_graph(g).graph;
  Rng rng(7);
  double w_export = 0.0, w_fold = 0.0, w_fuse = 0.0, w_opt = 0.0;
  bool elim_exact = true;
  for (int i = 0; i < 100; ++i) {
    auto b = random_batch(rng, 50, 1 + i % 5, 2 + i % 11);
    const Tensor ref = run_graph(g, b);
    w_export = std::max(w_export, max_abs_diff(ref, forward(ck, b)));
    w_fold = std::max(w_fold, max_abs_diff(run_graph(folded, b), ref));
    w_fuse = std::max(w_fuse, max_abs_diff(run_graph(fused, b), ref));
    w_opt = std::max(w_opt, max_abs_diff(run_graph(opt, b), ref));
    elim_exact = elim_exact && bit_equal(run_graph(elim, b), ref);
  }
  CHECK(w_export <= 1e-5);
  CHECK(w_fold <= 1e-5);
  CHECK(w_fuse <= 1e-5);
  CHECK(w_opt <= 1e-5);
  CHECK(elim_exact);
}

TEST_CASE("empty batch yields empty logits") {
  auto ck = toy_model(HeadKind::token_label(2), 1, 8, 2, 20, 1);
  auto g = export_graph(ck);
  Batch b;
  auto out = run_graph(g, b);
  CHECK(out.numel() == 0);
  CHECK(out.shape() == Shape{0, 0, 2});
  auto seq = export_graph(toy_model(HeadKind::single_label(3), 1, 8, 2, 20, 1));
  CHECK(run_graph(seq, b).shape() == Shape{0, 3});
}

TEST_CASE("one-layer classifier export has the enumerated node list") {
  auto ck = toy_model(HeadKind::single_label(2), 1, 8, 2, 20, 1);
  auto g = export_graph(ck);
  // embeddings: gather, positions, add, layer norm (9), dropout
  // attention bias: 1
  // layer: 3 x (transpose, matmul, add), 3 split, transpose k, matmul, mul, add, softmax,
  //        dropout, matmul, merge, o-linear (3), dropout, residual add, layer norm (9),
  //        ffn1 (3), gelu, ffn2 (3), dropout, residual add, layer norm (9)
  // head: select, pool linear (3), tanh, dropout, out linear (3)
  const std::size_t embed = 3 + 9 + 1, bias = 1;
  const std::size_t layer = 9 + 3 + 1 + 1 + 1 + 1 + 1 + 1 + 1 + 1 + 3 + 1 + 1 + 9 + 3 + 1 + 3 + 1 + 1 + 9;
  const std::size_t head = 1 + 3 + 1 + 1 + 3;
  CHECK(g.node_count() == embed + bias + layer + head);
  auto h = g.op_histogram();
  CHECK(h[OpKind::Dropout] == 5);
  CHECK(h[OpKind::Softmax] == 1);
  CHECK(h[OpKind::Transpose] == 9);
  CHECK(h[OpKind::ReduceMean] == 6);
  CHECK(h[OpKind::SplitHeads] == 3);
}

TEST_CASE("constant folding") {
  GraphProgram g;
  g.inputs = {"x"};
  g.initializers["a"] = Initializer{{2, 2}, {1, 2, 3, 4}, false, {}};
  g.initializers["b"] = Initializer{{2, 2}, {0.5f, 0.5f, 0.5f, 0.5f}, false, {}};
  g.nodes.push_back({"sum", OpKind::Add, {"a", "b"}, nlohmann::json::object()});
  g.nodes.push_back({"y", OpKind::MatMul, {"x", "sum"}, nlohmann::json::object()});
  g.outputs = {"y"};
  auto f = constant_fold(g);
  CHECK(f.node_count() == g.node_count() - 1);
  CHECK(f.initializers.count("sum") == 1);
  CHECK(f.initializers.count("a") == 0);
  CHECK(constant_fold(f) == f);
  std::map<std::string, Value> in{{"x", Value{{1, 2}, {1.0f, -1.0f}}}};
  CHECK(execute(f, in).at("y").data == execute(g, in).at("y").data);

  auto ck = toy_model(HeadKind::mlm(), 2, 8, 2, 20, 2);
  auto e = constant_fold(export_graph(ck));
  CHECK(constant_fold(e) == e);
  CHECK(e.op_histogram()[OpKind::Transpose] == 2);  // only the attention key transposes remain
}

TEST_CASE("redundancy elimination") {
  GraphProgram g;
  g.inputs = {"x"};
  g.nodes.push_back({"i1", OpKind::Identity, {"x"}, nlohmann::json::object()});
  g.nodes.push_back({"d1", OpKind::Dropout, {"i1"}, nlohmann::json::object()});
  g.nodes.push_back({"t1", OpKind::Transpose, {"d1"}, nlohmann::json::object()});
  g.nodes.push_back({"t2", OpKind::Transpose, {"t1"}, nlohmann::json::object()});
  g.nodes.push_back({"y", OpKind::Tanh, {"t2"}, nlohmann::json::object()});
  g.outputs = {"y"};
  auto e = eliminate_redundant(g);
  REQUIRE(e.node_count() == 1);
  CHECK(e.nodes[0].inputs == std::vector<std::string>{"x"});
  Rng rng(3);
  Value x{{2, 3, 4}, {}};
  for (int i = 0; i < 24; ++i) x.data.push_back(rng.uniform() - 0.5f);
  CHECK(execute(e, {{"x", x}}).at("y").data == execute(g, {{"x", x}}).at("y").data);

  // identity chain straight to the output
  GraphProgram chain;
  chain.inputs = {"x"};
  chain.nodes.push_back({"a", OpKind::Tanh, {"x"}, nlohmann::json::object()});
  chain.nodes.push_back({"b", OpKind::Identity, {"a"}, nlohmann::json::object()});
  chain.nodes.push_back({"c", OpKind::Identity, {"b"}, nlohmann::json::object()});
  chain.outputs = {"c"};
  auto ce = eliminate_redundant(chain);
  CHECK(ce.node_count() == 1);
  CHECK(ce.outputs == std::vector<std::string>{"a"});
  CHECK(execute(ce, {{"x", x}}).at("a").data == execute(chain, {{"x", x}}).at("c").data);
}

TEST_CASE("fusion rewrites and node counts") {
  for (const auto& head : kHeads) {
    CAPTURE(to_string(head.type));
    auto ck = toy_model(head, 2, 16, 4, 30, 9);
    auto g = export_graph(ck);
    auto prepared = eliminate_redundant(constant_fold(g));
    int pairs = 0;
    for (const auto& n : prepared.nodes)
      if (n.op == OpKind::MatMul && prepared.initializers.count(n.inputs[1])) ++pairs;
    auto fused = fuse_ops(prepared);
    CHECK(prepared.node_count() - fused.node_count() >= static_cast<std::size_t>(pairs));
    auto h = fused.op_histogram();
    CHECK(h[OpKind::ReduceMean] == 0);
    CHECK(h[OpKind::LinearGelu] == 2 + (head.type == HeadType::MLM ? 1 : 0));
    CHECK(h[OpKind::AddLayerNorm] == 5);  // embedding sum fuses too
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
      auto b = random_batch(rng, 30, 2, 7);
      CHECK(max_abs_diff(run_graph(fused, b), run_graph(g, b)) <= 1e-5);
    }
  }
}

TEST_CASE("pass pipeline reaches a fixpoint with non-increasing node counts") {
  auto ck = toy_model(HeadKind::single_label(3), 3, 16, 2, 30, 4);
  auto g = export_graph(ck);
  std::size_t prev = g.node_count();
  GraphProgram cur = g;
  for (int round = 0; round < 5; ++round) {
    for (auto pass : {constant_fold, eliminate_redundant, fuse_ops}) {
      cur = pass(cur);
      CHECK(cur.node_count() <= prev);
      prev = cur.node_count();
    }
  }
  auto r = optimize_graph(g);
  CHECK(r.rounds <= 5);
  CHECK(optimize_graph(r.graph).graph == r.graph);
  CHECK(r.graph == cur);
}

TEST_CASE("weight quantization primitives") {
  std::vector<float> zeros(12, 0.0f);
  auto qz = QuantizedTensor::quantize_rows(zeros.data(), 3, 4);
  CHECK(qz.dequantize() == zeros);

  Rng rng(5);
  std::vector<float> w(64 * 64);
  for (auto& v : w) v = rng.normal(0.0f, 1.0f);
  auto q = QuantizedTensor::quantize_rows(w.data(), 64, 64);
  auto back = q.dequantize();
  bool within = true;
  for (std::size_t i = 0; i < w.size(); ++i) within = within && std::abs(back[i] - w[i]) <= q.scales[i / 64] / 2 + 1e-7f;
  CHECK(within);
  for (auto v : q.values) CHECK(std::abs(int(v)) <= 127);

  std::vector<float> act{-1.0f, 0.5f, 2.0f, 3.0f};
  auto a = activation_range(act.data(), 4);
  CHECK(a.scale == doctest::Approx(4.0 / 255.0));
  CHECK(std::nearbyint(-1.0f / a.scale) + a.zero_point == -128);
}

TEST_CASE("quantized graph: payload, agreement, drift, latency, round trip") {
  auto lex = synthetic::Lexicon::make(3, 4, 30, 21);
  synthetic::ClassTaskOptions o;
  o.num_classes = 3;
  auto data = synthetic::single_label_task(lex, 240, 40, 500, o, 21);
  auto tok = BpeTokenizer::train(synthetic::texts(data.train), 120);
  TaskSpec spec{HeadKind::single_label(3), {}, 24};
  auto train = encode_examples(tok, data.train, spec);
  auto val = encode_examples(tok, data.validation, spec);
  auto test = encode_examples(tok, data.test, spec);
  auto cfg = ModelConfig::uniform(2, 64, 4, static_cast<int>(tok.vocab_size()), spec.max_len, spec.head);
  TrainConfig tc;
  tc.lr = 1e-3f;
  tc.max_epochs = 6;
  tc.patience = 6;
  tc.seed = 3;
  auto ck = finetune(init_model(cfg, 3, tok.fingerprint()), train, val, spec, tc).ckpt;

  auto g = export_graph(ck);
  auto opt = optimize_graph(g).graph;
  auto quant = quantize_dynamic(opt);
  const double ratio = linear_weight_payload_ratio(quant);
  CHECK(ratio >= 0.24);
  CHECK(ratio <= 0.28);
  CHECK(linear_weight_payload_ratio(opt) == 1.0);

  int agree = 0;
  double drift = 0.0;
  for (std::size_t start = 0; start < test.size(); start += 50) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(test.size(), start + 50); ++i) idx.push_back(i);
    auto tb = make_batch(test, idx, spec);
    const Tensor ref = forward(ck, tb.batch);
    const Tensor q = run_graph(quant, tb.batch);
    drift = std::max(drift, max_abs_diff(ref, q));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float* a = ref.data().data() + r * 3;
      const float* b = q.data().data() + r * 3;
      agree += std::max_element(a, a + 3) - a == std::max_element(b, b + 3) - b;
    }
  }
  MESSAGE("agreement " << agree << "/" << test.size() << ", max logit drift " << drift);
  CHECK(test.size() == 500);
  CHECK(agree >= 490);
  CHECK(drift <= 0.1);

  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < 32; ++i) idx[i] = i;
  auto b32 = make_batch(test, idx, spec).batch;
  CHECK(bit_equal(run_graph(quant, b32), run_graph(quant, b32)));

  const auto path = std::filesystem::temp_directory_path() / "gcmp_test_graph.bin";
  quant.save(path);
  auto loaded = GraphProgram::load(path);
  CHECK(loaded == quant);
  CHECK(bit_equal(run_graph(loaded, b32), run_graph(quant, b32)));
  std::filesystem::remove(path);

  const int threads = kernels::num_threads();
  kernels::set_num_threads(1);
  auto slow = measure_latency(g, b32);
  auto fast = measure_latency(quant, b32);
  kernels::set_num_threads(threads);
  MESSAGE("latency f32 " << slow.mean_seconds << "s, optimized int8 " << fast.mean_seconds << "s");
  CHECK(slow.runs == 30);
  CHECK(fast.p50_seconds > 0.0);
  CHECK(fast.mean_seconds < slow.mean_seconds);
}

TEST_CASE("graph validation errors") {
  auto g = export_graph(toy_model(HeadKind::single_label(2), 1, 8, 2, 20, 1));
  auto broken = g;
  broken.nodes[3].inputs[0] = "nowhere";
  CHECK_THROWS_AS(broken.validate(), ValidationError);
  CHECK_THROWS_AS(parse_op_kind("Conv"), ValidationError);
  Rng rng(1);
  auto b = random_batch(rng, 20, 1, 4);
  b.ids[0] = 25;
  CHECK_THROWS_AS(run_graph(g, b), ValidationError);
  CHECK_THROWS_AS(execute(g, {}), ValidationError);
  Container c = g.to_container();
  c.header["kind"] = "checkpoint";
  CHECK_THROWS_AS(GraphProgram::from_container(c), ValidationError);
  for (auto op : {OpKind::Gather, OpKind::LinearGelu, OpKind::AddLayerNorm}) CHECK(parse_op_kind(to_string(op)) == op);
}
