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

// One entry per differentiable operator / loss, shared by the unit tests and
// the acceptance suite's gradient criterion.

#include <functional>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"

namespace gcmp::testing {

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
};

inline std::vector<OpCase> all_op_cases() {
  using V = std::vector<Tensor>;
  std::vector<OpCase> cases;
  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> f) {
    cases.push_back({std::move(name), [](Rng& r) { return V{random_tensor({3, 4}, r)}; },
                     [f](const V& in) { return f(in[0]); }});
  };

  cases.push_back({"matmul", [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({4, 5}, r)}; },
                   [](const V& in) { return ops::matmul(in[0], in[1]); }});
  cases.push_back({"matmul_batched",
                   [](Rng& r) { return V{random_tensor({2, 3, 4}, r), random_tensor({2, 4, 3}, r)}; },
                   [](const V& in) { return ops::matmul(in[0], in[1]); }});
  unary("transpose", [](const Tensor& x) { return ops::transpose(x); });
  cases.push_back({"linear",
                   [](Rng& r) {
                     return V{random_tensor({3, 4}, r), random_tensor({5, 4}, r), random_tensor({5}, r)};
                   },
                   [](const V& in) { return ops::linear(in[0], in[1], in[2]); }});
  cases.push_back({"add", [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({4}, r)}; },
                   [](const V& in) { return ops::add(in[0], in[1]); }});
  cases.push_back({"mul", [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
                   [](const V& in) { return ops::mul(in[0], in[1]); }});
  cases.push_back({"mul_broadcast", [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({4}, r)}; },
                   [](const V& in) { return ops::mul(in[0], in[1]); }});
  unary("scale", [](const Tensor& x) { return ops::scale(x, -1.7f); });
  cases.push_back({"embedding", [](Rng& r) { return V{random_tensor({6, 4}, r)}; },
                   [](const V& in) {
                     const std::vector<std::int32_t> ids{0, 2, 5, 2, 1, 2};
                     return ops::embedding(in[0], ids, {2, 3});
                   }});
  cases.push_back({"layer_norm",
                   [](Rng& r) {
                     return V{random_tensor({3, 4}, r, -2.0f, 2.0f), random_tensor({4}, r, 0.5f, 1.5f),
                              random_tensor({4}, r)};
                   },
                   [](const V& in) { return ops::layer_norm(in[0], in[1], in[2]); }});
  unary("gelu", [](const Tensor& x) { return ops::gelu(x); });
  unary("tanh", [](const Tensor& x) { return ops::tanh(x); });
  unary("sigmoid", [](const Tensor& x) { return ops::sigmoid(x); });
  unary("softmax", [](const Tensor& x) { return ops::softmax(x); });
  unary("log_softmax", [](const Tensor& x) { return ops::log_softmax(x); });
  unary("dropout", [](const Tensor& x) {
    Rng fixed(99);
    return ops::dropout(x, 0.3f, fixed, true);
  });
  unary("reshape", [](const Tensor& x) { return ops::reshape(x, {2, 6}); });
  unary("slice", [](const Tensor& x) { return ops::slice(x, 1, 1, 2); });
  cases.push_back({"concat",
                   [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({3, 2}, r)}; },
                   [](const V& in) { return ops::concat({in[0], in[1]}, 1); }});
  cases.push_back({"concat_axis0",
                   [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({1, 4}, r)}; },
                   [](const V& in) { return ops::concat({in[0], in[1]}, 0); }});
  unary("sum", [](const Tensor& x) { return ops::sum(x); });
  unary("mean", [](const Tensor& x) { return ops::mean(x); });

  cases.push_back({"cross_entropy", [](Rng& r) { return V{random_tensor({3, 4}, r, -2.0f, 2.0f)}; },
                   [](const V& in) {
                     const std::vector<std::int32_t> t{1, ops::kIgnore, 3};
                     return ops::cross_entropy(in[0], t);
                   }});
  cases.push_back({"binary_cross_entropy",
                   [](Rng& r) { return V{random_tensor({3, 4}, r, -2.0f, 2.0f), random_tensor({3, 4}, r, 0.1f, 0.9f)}; },
                   [](const V& in) { return ops::binary_cross_entropy(in[0], in[1]); }});
  cases.push_back({"mean_squared_error",
                   [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
                   [](const V& in) { return ops::mean_squared_error(in[0], in[1]); }});
  cases.push_back({"kl_divergence",
                   [](Rng& r) { return V{random_tensor({3, 4}, r, -2.0f, 2.0f), random_tensor({3, 4}, r, -2.0f, 2.0f)}; },
                   [](const V& in) {
                     return ops::kl_divergence(ops::softmax(in[0]), ops::softmax(in[1]));
                   }});
  cases.push_back({"kl_divergence_with_logits",
                   [](Rng& r) { return V{random_tensor({3, 4}, r, -2.0f, 2.0f)}; },
                   [](const V& in) {
                     const Tensor p(Shape{3, 4}, {0.1f, 0.2f, 0.3f, 0.4f, 0.25f, 0.25f, 0.25f, 0.25f,
                                                  0.7f, 0.1f, 0.1f, 0.1f});
                     const std::vector<float> w{1.0f, 0.0f, 2.0f};
                     return ops::kl_divergence_with_logits(p, in[0], w);
                   }});
  return cases;
}

}  // namespace gcmp::testing
