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

#include <cstdint>
#include <span>
#include <vector>

#include "gcmp/rng.hpp"
#include "gcmp/tensor.hpp"

// Differentiable operators. Each op computes its forward value eagerly and,
// when a Tape is active and any input requires a gradient, records a backward
// closure that accumulates into the inputs' grad buffers.
//
// Broadcasting is limited to what the encoder needs: for binary elementwise
// ops the second operand's shape must be a suffix of the first's.
namespace gcmp::ops {

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)@(k,n) or (B,m,k)@(B,k,n)
Tensor transpose(const Tensor& a);                // swaps the last two axes
// x(..., in) @ w(out, in)^T + b(out). `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// Gathers rows of `table` (rows, dim); result shape is prefix + (dim).
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& prefix);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x);  // over the last axis
Tensor log_softmax(const Tensor& x);

// Inverted dropout; identity (same handle) when !train or p == 0.
Tensor dropout(const Tensor& x, float p, Rng& rng, bool train);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& xs, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// --- losses (scalar results) ---

// Mean over rows whose target is not kIgnore. logits (N, C).
inline constexpr std::int32_t kIgnore = -1;
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);
// Sigmoid + BCE averaged over every element. targets in [0, 1], same shape.
Tensor binary_cross_entropy(const Tensor& logits, const Tensor& targets);
Tensor mean_squared_error(const Tensor& pred, const Tensor& target);
// Row-mean of sum p * ln(p / q); p and q must be row distributions.
Tensor kl_divergence(const Tensor& p, const Tensor& q);
// Weighted row-mean of KL(p || softmax(logits)). p is treated as constant.
// Empty row_weights means uniform.
Tensor kl_divergence_with_logits(const Tensor& p, const Tensor& logits,
                                 std::span<const float> row_weights = {});

}  // namespace gcmp::ops
