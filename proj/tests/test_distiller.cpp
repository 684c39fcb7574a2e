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

#include "gcmp/distiller.hpp"
#include "gcmp/error.hpp"
#include "gcmp/ops.hpp"
#include "gcmp/synthetic.hpp"

using namespace gcmp;

namespace {

TaskBatch labels_batch(std::vector<std::int32_t> labels) {
  TaskBatch tb;
  tb.labels = std::move(labels);
  return tb;
}

DistillConfig weights(float t, float a) {
  DistillConfig c;
  c.temperature = t;
  c.task_weight = a;
  return c;
}

const TaskSpec kTwoClass{HeadKind::single_label(2), {}, 16};
const TaskSpec kThreeClass{HeadKind::single_label(3), {}, 16};

double hand_kl(std::vector<double> t, std::vector<double> s, double temp) {
  double zt = 0, zs = 0;
  for (auto& x : t) zt += std::exp(x / temp);
  for (auto& x : s) zs += std::exp(x / temp);
  double kl = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = std::exp(t[i] / temp) / zt, q = std::exp(s[i] / temp) / zs;
    kl += p * std::log(p / q);
  }
  return kl;
}

}  // namespace

TEST_CASE("distillation loss examples") {
  auto tb = labels_batch({0});
  Tensor t({1, 2}, {2.0f, 0.0f});
  Tensor s({1, 2}, {0.0f, 0.0f});
  CHECK(distill_loss(kTwoClass, t, s, tb, weights(1, 0)).item() == doctest::Approx(0.328).epsilon(0.002));
  CHECK(distill_loss(kTwoClass, t, s, tb, weights(1, 0)).item() == doctest::Approx(hand_kl({2, 0}, {0, 0}, 1)));
  CHECK(distill_loss(kTwoClass, t, t, tb, weights(1, 0)).item() == doctest::Approx(0.0).epsilon(1e-7));

  Tensor s2({1, 2}, {0.3f, -1.0f});
  const float task = task_loss(kTwoClass, s2, tb).item();
  CHECK(distill_loss(kTwoClass, t, s2, tb, weights(4, 1)).item() == task);
  CHECK(distill_loss(kTwoClass, s2, s2, tb, weights(4, 1)).item() == task);
  const double mixed = 0.3 * task + 0.7 * 16 * hand_kl({2, 0}, {0.3, -1}, 4);
  CHECK(distill_loss(kTwoClass, t, s2, tb, weights(4, 0.3f)).item() == doctest::Approx(mixed).epsilon(1e-5));

  TaskSpec reg{HeadKind::regression(), {}, 16};
  TaskBatch rb;
  rb.targets = Tensor({2, 1}, {1.0f, 2.0f});
  Tensor rt({2, 1}, {0.5f, 3.0f});
  CHECK(distill_loss(reg, rt, rt, rb, weights(10, 0)).item() == 0.0f);
  Tensor rs({2, 1}, {1.5f, 1.0f});
  CHECK(distill_loss(reg, rt, rs, rb, weights(10, 0)).item() == doctest::Approx((1.0 + 4.0) / 2));

  TaskSpec ml{HeadKind::multi_label(2), {}, 16};
  TaskBatch mb;
  mb.targets = Tensor({1, 2}, {1.0f, 0.0f});
  Tensor mt({1, 2}, {2.0f, -4.0f});
  Tensor ms({1, 2}, {1.0f, 1.0f});
  double bce = 0;
  for (int i = 0; i < 2; ++i) {
    const double target = 1 / (1 + std::exp(-mt.data()[i] / 2.0));
    const double pred = 1 / (1 + std::exp(-ms.data()[i] / 2.0));
    bce -= target * std::log(pred) + (1 - target) * std::log(1 - pred);
  }
  CHECK(distill_loss(ml, mt, ms, mb, weights(2, 0)).item() == doctest::Approx(bce / 2).epsilon(1e-5));
}

TEST_CASE("distillation loss errors") {
  auto tb = labels_batch({0});
  Tensor t({1, 2}, {2.0f, 0.0f});
  Tensor s({1, 3}, {0.0f, 0.0f, 0.0f});
  CHECK_THROWS_AS(distill_loss(kTwoClass, t, s, tb, weights(1, 0)), ShapeError);
  CHECK_THROWS_AS(distill_loss(kTwoClass, s, s, tb, weights(1, 0)), ShapeError);
  CHECK_THROWS_AS(distill_loss(kTwoClass, t, t, tb, weights(0, 0)), ValidationError);
  CHECK_THROWS_AS(distill_loss(kTwoClass, t, t, tb, weights(1, 1.5f)), ValidationError);
  CHECK_THROWS_AS(weights(-1, 0.5f).validate(), ValidationError);
}

TEST_CASE("softened divergence shrinks with temperature") {
  auto tb = labels_batch({0, 1});
  Tensor t({2, 3}, {2.0f, -1.0f, 0.5f, 0.0f, 3.0f, -2.0f});
  Tensor s({2, 3}, {-1.0f, 0.0f, 1.0f, 1.0f, 1.0f, 0.0f});
  double prev = 1e9;
  for (float temp = 1; temp <= 60; temp += 0.5f) {
    const double kl = distill_loss(kThreeClass, t, s, tb, weights(temp, 0)).item() / (temp * temp);
    CHECK(kl < prev);
    prev = kl;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("scaled divergence keeps gradient magnitude flat in temperature") {
  auto tb = labels_batch({0, 1});
  std::vector<double> norms;
  for (float temp : {1.0f, 5.0f, 10.0f, 15.0f}) {
    Tensor t({2, 3}, {2.0f, -1.0f, 0.5f, 0.0f, 3.0f, -2.0f});
    Tensor s({2, 3}, {-1.0f, 0.0f, 1.0f, 1.0f, 1.0f, 0.0f}, true);
    Tape tape;
    {
      TapeScope scope(tape);
      Tensor loss = distill_loss(kThreeClass, t, s, tb, weights(temp, 0));
      tape.backward(loss);
    }
    double n = 0;
    for (float g : s.grad()) n += double(g) * g;
    norms.push_back(std::sqrt(n));
  }
  for (double n : norms) {
    CHECK(n > 0.2 * norms[0]);
    CHECK(n < 5.0 * norms[0]);
  }
  // The large-T limit of T * (q - p) is (s - t) centred, over the class count.
  CHECK(std::abs(norms[3] - norms[2]) < 0.1 * norms[2]);
}

TEST_CASE("token distillation ignores padded positions") {
  TaskSpec tok{HeadKind::token_label(2), {"O", "B-X"}, 16};
  TaskBatch tb;
  tb.batch.size = 1;
  tb.batch.seq_len = 3;
  tb.batch.ids = {SpecialIds::kCls, 7, SpecialIds::kPad};
  tb.batch.mask = {1, 1, 0};
  tb.labels = {-1, 1, -1};
  Tensor t({1, 3, 2}, {1, 0, 0, 2, 0.5f, 0.5f});
  Tensor s1({1, 3, 2}, {0, 0, 1, 0, 9, -9});
  Tensor s2({1, 3, 2}, {0, 0, 1, 0, -4, 4});
  const float l1 = distill_loss(tok, t, s1, tb, weights(2, 0)).item();
  CHECK(l1 == distill_loss(tok, t, s2, tb, weights(2, 0)).item());
  const double expect = 4 * (hand_kl({1, 0}, {0, 0}, 2) + hand_kl({0, 2}, {1, 0}, 2)) / 2;
  CHECK(l1 == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("teacher assistant trigger") {
  CHECK(needs_teacher_assistant(1700, 100));
  CHECK_FALSE(needs_teacher_assistant(1600, 100));
  CHECK_FALSE(needs_teacher_assistant(500, 100));
  CHECK(needs_teacher_assistant(500, 100, 4.0));
  CHECK_THROWS_AS(needs_teacher_assistant(0, 100), ValidationError);
}

namespace {

struct Toy {
  BpeTokenizer tok;
  TaskSpec spec;
  std::vector<EncodedExample> train, val;
};

Toy toy_task(int n_train, int n_val, double noise, std::uint64_t seed) {
  auto lex = synthetic::Lexicon::make(3, 4, 30, seed);
  synthetic::ClassTaskOptions o;
  o.num_classes = 3;
  o.filler_min = 2;
  o.filler_max = 5;
  o.label_noise = noise;
  auto d = synthetic::single_label_task(lex, n_train, n_val, 0, o, seed);
  auto tok = BpeTokenizer::train(synthetic::texts(d.train), 90);
  Toy t{tok, TaskSpec{HeadKind::single_label(3), {}, 20}, {}, {}};
  t.train = encode_examples(t.tok, d.train, t.spec);
  t.val = encode_examples(t.tok, d.validation, t.spec);
  return t;
}

ModelConfig shape(const Toy& t, int layers, int hidden, int heads, int ffn) {
  return ModelConfig::uniform(layers, hidden, heads, static_cast<int>(t.tok.vocab_size()), ffn, t.spec.head);
}

Checkpoint trained_teacher(const Toy& t, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.lr = 1e-3f;
  cfg.max_epochs = 20;
  cfg.patience = 8;
  cfg.seed = seed;
  auto init = init_model(shape(t, 2, 32, 4, 64), seed, t.tok.fingerprint());
  return finetune(init, t.train, t.val, t.spec, cfg).ckpt;
}

std::vector<int> argmaxes(const Checkpoint& m, const Toy& t) {
  std::vector<int> out;
  for (const auto& p : evaluate(m, t.train, t.spec).predictions) out.push_back(p.label);
  return out;
}

}  // namespace

TEST_CASE("distillation from an identical student starts at zero and leaves the teacher unchanged") {
  auto t = toy_task(60, 20, 0.0, 4);
  auto teacher = trained_teacher(t, 1);
  const auto before = teacher;
  auto cache = TeacherCache::build(teacher, t.train, t.spec);
  std::vector<std::size_t> idx(t.train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t one[1] = {i};
    TaskBatch tb = make_batch(t.train, one, t.spec);
    CHECK(distill_loss(t.spec, cache.gather(one, tb, t.spec), forward(teacher, tb.batch), tb, weights(5, 0)).item() ==
          doctest::Approx(0.0).epsilon(1e-6));
  }
  auto again = TeacherCache::build(teacher, t.train, t.spec);
  CHECK(again.logits == cache.logits);

  DistillConfig cfg = weights(5, 0);
  cfg.train.max_epochs = 0;
  cfg.train.patience = 0;
  auto r0 = distill(teacher, teacher, t.train, t.val, t.spec, cfg);
  CHECK(bit_equal(r0.student, teacher));

  cfg.train.max_epochs = 2;
  cfg.train.lr = 1e-3f;
  auto student = init_model(shape(t, 1, 16, 2, 32), 9, t.tok.fingerprint());
  auto r = distill(teacher, student, t.train, t.val, t.spec, cfg);
  CHECK(bit_equal(teacher, before));
  CHECK(r.epochs_run == 2);
  auto r2 = distill(teacher, student, t.train, t.val, t.spec, cfg, &cache);
  CHECK(bit_equal(r.student, r2.student));

  auto other = student;
  other.tokenizer_hash = "different";
  CHECK_THROWS_AS(distill(teacher, other, t.train, t.val, t.spec, cfg), ValidationError);
  auto wrong_head = init_model(ModelConfig::uniform(1, 16, 2, static_cast<int>(t.tok.vocab_size()), 32, HeadKind::single_label(4)),
                               9, t.tok.fingerprint());
  CHECK_THROWS_AS(distill(teacher, wrong_head, t.train, t.val, t.spec, cfg), ValidationError);
}

TEST_CASE("student matches teacher argmax on a small training set") {
  auto t = toy_task(50, 20, 0.0, 6);
  auto teacher = trained_teacher(t, 2);
  DistillConfig cfg = weights(10, 0);
  cfg.train.lr = 3e-3f;
  cfg.train.max_epochs = 40;
  cfg.train.patience = 40;
  cfg.train.batch_size = 8;
  auto student = init_model(shape(t, 1, 16, 2, 32), 3, t.tok.fingerprint());
  auto r = distill(teacher, student, t.train, t.val, t.spec, cfg);
  const auto a = argmaxes(teacher, t), b = argmaxes(r.student, t);
  int agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
  MESSAGE("agreement " << agree << "/" << a.size());
  CHECK(agree >= static_cast<int>(std::ceil(0.95 * a.size())));
}

TEST_CASE("teacher assistant bounds") {
  auto t = toy_task(40, 10, 0.0, 7);
  auto teacher = init_model(shape(t, 2, 32, 4, 64), 1, t.tok.fingerprint());
  auto assistant = init_model(shape(t, 1, 32, 4, 64), 1, t.tok.fingerprint());
  DistillConfig cfg = weights(5, 0.5f);
  cfg.train.max_epochs = 1;
  cfg.train.patience = 1;
  CHECK_THROWS_AS(make_teacher_assistant(teacher, teacher, 10, t.train, t.val, t.spec, cfg), ValidationError);
  CHECK_THROWS_AS(make_teacher_assistant(teacher, assistant, assistant.parameter_count(), t.train, t.val, t.spec, cfg),
                  ValidationError);
  auto r = make_teacher_assistant(teacher, assistant, 100, t.train, t.val, t.spec, cfg);
  CHECK(r.epochs_run == 1);
}

TEST_CASE("distilled student is at least as good as a fine-tuned one") {
  std::vector<double> kd, ft;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto t = toy_task(300, 150, 0.25, 10 + seed);
    auto teacher = trained_teacher(t, seed);
    auto student = init_model(shape(t, 1, 16, 2, 32), 100 + seed, t.tok.fingerprint());
    TrainConfig tc;
    tc.lr = 1e-3f;
    tc.max_epochs = 20;
    tc.patience = 8;
    tc.seed = seed;
    ft.push_back(*finetune(student, t.train, t.val, t.spec, tc).validation.metrics.macro_f1);
    DistillConfig dc = weights(5, 0.3f);
    dc.train = tc;
    kd.push_back(*distill(teacher, student, t.train, t.val, t.spec, dc).validation.metrics.macro_f1);
  }
  std::sort(kd.begin(), kd.end());
  std::sort(ft.begin(), ft.end());
  MESSAGE("median kd " << kd[1] << " ft " << ft[1]);
  CHECK(kd[1] >= ft[1]);
}
