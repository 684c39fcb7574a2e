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

#include <filesystem>

#include "gcmp/error.hpp"
#include "gcmp/model.hpp"
#include "gcmp/ops.hpp"
#include "support/reference_model.hpp"

using namespace gcmp;
using gcmp::testing::max_abs_diff;
using gcmp::testing::reference_forward;

namespace {

// Init weights are tiny; spread them so every path matters numerically.
Checkpoint random_model(const ModelConfig& cfg, std::uint64_t seed) {
  Checkpoint ck = init_model(cfg, seed);
  Rng rng(seed + 100);
  for (auto& [name, t] : ck.params)
    for (auto& v : t.data()) v = (name.find(".g") != std::string::npos ? 1.0f : 0.0f) + rng.uniform() - 0.5f;
  return ck;
}

Batch random_batch(Rng& rng, int b, int s, int vocab, bool with_padding) {
  std::vector<std::vector<TokenId>> seqs;
  for (int i = 0; i < b; ++i) {
    const int len = with_padding ? 1 + static_cast<int>(rng.below(s)) : s;
    std::vector<TokenId> ids;
    for (int j = 0; j < len; ++j) ids.push_back(static_cast<TokenId>(rng.below(vocab)));
    seqs.push_back(ids);
  }
  seqs[0].resize(static_cast<std::size_t>(s), 7 % vocab);
  return Batch::from_sequences(seqs);
}

std::int64_t tally(const ModelConfig& c) {
  const std::int64_t h = c.hidden;
  std::int64_t n = c.vocab_size * h + c.max_positions * h + 2 * h;
  for (int l = 0; l < c.num_layers; ++l) {
    const std::int64_t a = c.heads[l] * c.head_dim, f = c.ffn_dims[l];
    n += 3 * (a * h + a) + (h * a + h) + (f * h + f) + (h * f + h) + 4 * h;
  }
  switch (c.head.type) {
    case HeadType::MLM: n += h * h + h + 2 * h + c.vocab_size; break;
    case HeadType::TokenLabel: n += c.head.num_labels * h + c.head.num_labels; break;
    default: n += h * h + h + c.head.num_labels * h + c.head.num_labels;
  }
  return n;
}

std::vector<TokenId> row_ids(const Batch& b, std::int64_t r) {
  return {b.ids.begin() + r * b.seq_len, b.ids.begin() + (r + 1) * b.seq_len};
}
std::vector<float> row_mask(const Batch& b, std::int64_t r) {
  return {b.mask.begin() + r * b.seq_len, b.mask.begin() + (r + 1) * b.seq_len};
}

}  // namespace

TEST_CASE("configs and parameter counts") {
  auto tiny = family_config(ModelSize::Tiny, 1000, 64, HeadKind::mlm(), 1);
  CHECK(tiny.num_layers == 4);
  CHECK(tiny.hidden == 128);
  CHECK(tiny.heads == std::vector<int>(4, 4));
  CHECK(tiny.ffn_dims[0] == 512);
  auto large = family_config(ModelSize::Large, 1000, 64, HeadKind::mlm(), 8);
  CHECK(large.hidden == 128);
  CHECK(large.num_layers == 24);
  CHECK(large.heads[0] == 16);
  for (auto size : {ModelSize::Large, ModelSize::Base, ModelSize::Small, ModelSize::Tiny})
    for (auto head : {HeadKind::mlm(), HeadKind::single_label(3), HeadKind::regression(), HeadKind::token_label(5)}) {
      auto cfg = family_config(size, 300, 32, head);
      CHECK(count_parameters(cfg) == tally(cfg));
    }
  auto ck = init_model(family_config(ModelSize::Tiny, 200, 32, HeadKind::mlm()), 3);
  CHECK(ck.parameter_count() == tally(ck.config));
  CHECK_THROWS_AS(ModelConfig::uniform(2, 10, 3, 50, 8, HeadKind::mlm()), ValidationError);
  CHECK_THROWS_AS(HeadKind::single_label(1).validate(), ValidationError);
}

TEST_CASE("init is deterministic and follows the scheme") {
  auto cfg = ModelConfig::uniform(2, 16, 2, 40, 12, HeadKind::single_label(3));
  auto a = init_model(cfg, 9), b = init_model(cfg, 9), c = init_model(cfg, 10);
  CHECK(bit_equal(a, b));
  CHECK_FALSE(bit_equal(a, c));
  for (const auto& [name, t] : a.params) {
    if (name.ends_with(".g")) {
      for (float v : t.data()) CHECK(v == 1.0f);
    } else if (t.rank() == 1) {
      for (float v : t.data()) CHECK(v == 0.0f);
    } else {
      for (float v : t.data()) CHECK(std::abs(v) <= 0.04f);
    }
  }
  a.validate();
}

TEST_CASE("forward matches the hand-built reference") {
  Rng rng(17);
  SUBCASE("one layer, one head, hidden 4, two tokens") {
    auto ck = random_model(ModelConfig::uniform(1, 4, 1, 6, 4, HeadKind::mlm()), 1);
    Batch b = Batch::from_sequences({{2, 5}});
    Tensor out = forward(ck, b);
    CHECK(out.shape() == Shape{1, 2, 6});
    CHECK(max_abs_diff(out, 0, reference_forward(ck, {2, 5}, {1, 1})) < 1e-5);
  }
  for (auto head : {HeadKind::mlm(), HeadKind::multi_label(3), HeadKind::single_label(4),
                    HeadKind::regression(), HeadKind::token_label(5)}) {
    auto ck = random_model(ModelConfig::uniform(2, 8, 2, 20, 10, head), 5);
    Batch b = random_batch(rng, 3, 6, 20, true);
    Tensor out = forward(ck, b);
    for (std::int64_t r = 0; r < b.size; ++r) {
      auto ref = reference_forward(ck, row_ids(b, r), row_mask(b, r));
      INFO(to_string(head.type));
      CHECK(max_abs_diff(out, r, ref) < 1e-4);
    }
  }
}

TEST_CASE("forward properties") {
  Rng rng(3);
  auto ck = random_model(ModelConfig::uniform(2, 8, 2, 20, 10, HeadKind::single_label(3)), 2);
  Batch b = random_batch(rng, 4, 5, 20, true);
  Tensor a = forward(ck, b), a2 = forward(ck, b);
  CHECK(bit_equal(a, a2));

  Batch pad = Batch::from_sequences({{0, 0, 0}});
  pad.mask.assign(3, 0.0f);
  CHECK(forward(ck, pad).all_finite());

  // Reverse the batch order.
  Batch rev = b;
  for (std::int64_t r = 0; r < b.size; ++r)
    for (std::int64_t j = 0; j < b.seq_len; ++j) {
      rev.ids[r * b.seq_len + j] = b.ids[(b.size - 1 - r) * b.seq_len + j];
      rev.mask[r * b.seq_len + j] = b.mask[(b.size - 1 - r) * b.seq_len + j];
    }
  Tensor ar = forward(ck, rev);
  for (std::int64_t r = 0; r < b.size; ++r)
    for (int k = 0; k < 3; ++k) CHECK(ar.data()[r * 3 + k] == doctest::Approx(a.data()[(b.size - 1 - r) * 3 + k]).epsilon(1e-6));

  ForwardOptions train{.mode = Mode::Train, .seed = 4};
  CHECK_FALSE(bit_equal(forward(ck, b, train), a));
  CHECK(bit_equal(forward(ck, b, train), forward(ck, b, train)));

  Batch too_long = Batch::from_sequences({std::vector<TokenId>(11, 5)});
  CHECK_THROWS_AS(forward(ck, too_long), ValidationError);
  Batch oov = Batch::from_sequences({{25}});
  CHECK_THROWS_AS(forward(ck, oov), ValidationError);
  CHECK(forward(ck, Batch{}).shape() == Shape{0, 3});
}

TEST_CASE("checkpoint save/load is bit exact") {
  auto ck = random_model(ModelConfig::uniform(2, 8, 2, 20, 10, HeadKind::token_label(4)), 8);
  ck.tokenizer_hash = "abc123";
  const auto path = std::filesystem::temp_directory_path() / "gcmp_model_test.gcmp";
  ck.save(path);
  auto back = Checkpoint::load(path);
  CHECK(bit_equal(ck, back));
  auto bytes = read_file_bytes(path);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "GCMP");
  CHECK(bytes[4] == 1);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_container(bytes), ValidationError);
  std::filesystem::remove(path);

  Checkpoint copy = ck;
  copy.params.at("embed.tok").data()[0] += 1.0f;
  CHECK_FALSE(bit_equal(copy, ck));
}

TEST_CASE("reshape embeddings") {
  auto ck = random_model(ModelConfig::uniform(1, 8, 2, 12, 6, HeadKind::mlm()), 4);
  std::vector<std::string> vocab{"<pad>", "<unk>", "<cls>", "<sep>", "<mask>", kDefaultWordMarker,
                                 "a", "b", "c", "d", "ab", "cd"};
  BpeTokenizer tok(vocab, {{"a", "b"}, {"c", "d"}});
  std::vector<bool> keep(12, true);
  auto identity = apply_vocab_keep_mask(tok, keep);
  auto same = reshape_embeddings(ck, identity);
  same.tokenizer_hash = ck.tokenizer_hash;
  CHECK(bit_equal(same, ck));

  keep[8] = keep[9] = keep[11] = false;
  auto res = apply_vocab_keep_mask(tok, keep);
  auto small = reshape_embeddings(ck, res);
  CHECK(small.config.vocab_size == 9);
  CHECK(ck.parameter_count() - small.parameter_count() == 3 * (8 + 1));
  const auto& old_e = ck.param("embed.tok");
  const auto& new_e = small.param("embed.tok");
  for (std::size_t r = 0; r < res.kept_old_ids.size(); ++r)
    for (int j = 0; j < 8; ++j) CHECK(new_e.data()[r * 8 + j] == old_e.data()[res.kept_old_ids[r] * 8 + j]);
  for (const auto& [name, t] : small.params)
    if (name != "embed.tok" && name != "head.mlm.bias") CHECK(bit_equal(t, ck.param(name)));

  auto wrong = init_model(ModelConfig::uniform(1, 8, 2, 20, 6, HeadKind::mlm()), 1);
  CHECK_THROWS_AS(reshape_embeddings(wrong, res), ValidationError);
}

TEST_CASE("extract layers") {
  auto teacher = random_model(ModelConfig::uniform(4, 8, 2, 20, 10, HeadKind::single_label(3)), 6);
  const std::vector<int> all{0, 1, 2, 3};
  CHECK(bit_equal(extract_layers(teacher, all), teacher));
  const std::vector<int> pick{1, 3};
  auto student = extract_layers(teacher, pick);
  CHECK(student.config.num_layers == 2);
  for (const auto& [name, t] : teacher.params) {
    if (name.starts_with("layer.1.")) CHECK(bit_equal(student.param("layer.0." + name.substr(8)), t));
    if (name.starts_with("layer.3.")) CHECK(bit_equal(student.param("layer.1." + name.substr(8)), t));
    if (!name.starts_with("layer.")) CHECK(bit_equal(student.param(name), t));
  }
  const std::vector<int> first3{0, 1, 2};
  CHECK(extract_layers(teacher, first3).config.num_layers == 3);
  const std::vector<int> bad{0, 4}, unordered{2, 1};
  CHECK_THROWS_AS(extract_layers(teacher, bad), ValidationError);
  CHECK_THROWS_AS(extract_layers(teacher, unordered), ValidationError);

  auto donor = random_model(ModelConfig::uniform(1, 8, 2, 20, 10, HeadKind::token_label(5)), 7);
  auto mixed = extract_layers(teacher, pick, &donor);
  CHECK(mixed.config.head == HeadKind::token_label(5));
  CHECK(bit_equal(mixed.param("head.out.w"), donor.param("head.out.w")));
}

TEST_CASE("unit removal equals zero-masking") {
  Rng rng(23);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto ck = random_model(ModelConfig::uniform(2, 12, 3, 20, 8, HeadKind::token_label(3)), seed);
    Batch b = random_batch(rng, 3, 6, 20, true);
    std::vector<std::vector<int>> heads(2), neurons(2);
    UnitMask mask = UnitMask::all_on(ck.config);
    for (int l = 0; l < 2; ++l) {
      const int h = static_cast<int>(rng.below(3));
      heads[l].push_back(h);
      mask.head_gates[l][h] = 0.0f;
      for (int n = 0; n < 48; ++n)
        if (rng.bernoulli(0.4)) {
          neurons[l].push_back(n);
          mask.neuron_gates[l][n] = 0.0f;
        }
    }
    auto pruned = remove_ffn_neurons(remove_heads(ck, heads), neurons);
    CHECK(pruned.config.heads == std::vector<int>{2, 2});
    CHECK(pruned.config.hidden == 12);
    pruned.validate();
    ForwardOptions masked{.mask = &mask};
    Tensor want = forward(ck, b, masked);
    Tensor got = forward(pruned, b);
    double worst = 0.0;
    for (std::int64_t i = 0; i < want.numel(); ++i)
      worst = std::max(worst, double(std::abs(want.data()[i] - got.data()[i])));
    CHECK(worst < 1e-5);
    for (std::int64_t r = 0; r < b.size; ++r)
      CHECK(max_abs_diff(want, r, reference_forward(ck, row_ids(b, r), row_mask(b, r), &mask)) < 1e-4);
  }
  auto ck = random_model(ModelConfig::uniform(1, 8, 2, 20, 8, HeadKind::mlm()), 1);
  CHECK(bit_equal(remove_heads(ck, {{}}), ck));
  CHECK(bit_equal(remove_ffn_neurons(ck, {{}}), ck));
  CHECK_THROWS_AS(remove_heads(ck, {{0, 1}}), ValidationError);
  CHECK_THROWS_AS(remove_heads(ck, {{2}}), ValidationError);
}

TEST_CASE("surgery keeps surviving values bitwise") {
  auto ck = random_model(ModelConfig::uniform(1, 8, 2, 20, 8, HeadKind::mlm()), 2);
  auto pruned = remove_heads(ck, {{0}});
  const auto& oq = ck.param("layer.0.attn.q.w");
  const auto& nq = pruned.param("layer.0.attn.q.w");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c) CHECK(nq.data()[r * 8 + c] == oq.data()[(r + 4) * 8 + c]);
  const auto& oo = ck.param("layer.0.attn.o.w");
  const auto& no = pruned.param("layer.0.attn.o.w");
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 4; ++c) CHECK(no.data()[r * 4 + c] == oo.data()[r * 8 + c + 4]);
}

TEST_CASE("task heads") {
  auto body = init_model(ModelConfig::uniform(1, 8, 2, 20, 8, HeadKind::mlm()), 1);
  auto cls = with_task_head(body, HeadKind::multi_label(4), 2);
  CHECK_FALSE(cls.has("head.mlm.bias"));
  CHECK(cls.param("head.out.w").shape() == Shape{4, 8});
  cls.validate();
  CHECK(bit_equal(cls.param("layer.0.ffn.w1"), body.param("layer.0.ffn.w1")));
  auto back = with_head_from(cls, body);
  CHECK(bit_equal(back, body));
}

TEST_CASE("backward through the model reaches every parameter") {
  auto ck = init_model(ModelConfig::uniform(2, 8, 2, 20, 8, HeadKind::single_label(3)), 1);
  ck.set_requires_grad(true);
  Batch b = Batch::from_sequences({{2, 5, 6}, {2, 7}});
  Tape tape;
  TapeScope scope(tape);
  const std::vector<std::int32_t> labels{0, 2};
  Tensor loss = ops::cross_entropy(forward(ck, b, {.mode = Mode::Train, .seed = 1}), labels);
  tape.backward(loss);
  for (const auto& [name, t] : ck.params) {
    INFO(name);
    CHECK(t.has_grad());
  }
}
