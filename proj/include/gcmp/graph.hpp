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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "gcmp/container.hpp"
#include "gcmp/model.hpp"

namespace gcmp {

enum class OpKind {
  Gather,        // (table, ids) -> ids.shape + [cols]
  Positions,     // (table, ids) -> first seq_len rows of table, (S, cols)
  MaskBias,      // (mask) -> (B, 1, S, S): 0 for real keys, large negative for padding
  Add, Sub, Mul, Div,  // numpy-style broadcasting
  MatMul,        // (..., M, K) x (K, N) or matching batch dims
  Transpose,     // swap last two axes
  ReduceMean,    // last axis, kept as size 1
  Sqrt,
  Gelu,
  Tanh,
  Softmax,       // last axis
  Identity,
  Dropout,       // inference: identity
  SplitHeads,    // (B, S, h*d) -> (B, h, S, d); attr heads
  MergeHeads,    // (B, h, S, d) -> (B, S, h*d)
  SelectFirst,   // (B, S, H) -> (B, H)
  // fused
  Linear,        // (x, W (K, N), b)
  LinearGelu,
  LayerNorm,     // (x, g, b); attr eps
  AddLayerNorm,  // (x, residual, g, b); attr eps
};

std::string to_string(OpKind k);
OpKind parse_op_kind(const std::string& s);

struct GraphNode {
  std::string id;
  OpKind op = OpKind::Identity;
  std::vector<std::string> inputs;
  nlohmann::json attrs = nlohmann::json::object();

  bool operator==(const GraphNode&) const = default;
};

// Symmetric per-row int8 weights, rows are output channels: value = scale[r] * q.
struct QuantizedTensor {
  Shape shape;  // (rows, cols)
  std::vector<std::int8_t> values;
  std::vector<float> scales;

  static QuantizedTensor quantize_rows(const float* data, std::int64_t rows, std::int64_t cols);
  std::vector<float> dequantize() const;
  bool operator==(const QuantizedTensor&) const = default;
};

// Dense f32 or (for linear weights after quantization) int8.
struct Initializer {
  Shape shape;
  std::vector<float> f32;
  bool quantized = false;
  QuantizedTensor q;  // stored transposed: (N, K) for a (K, N) linear weight

  bool operator==(const Initializer&) const = default;
};

struct Value {
  Shape shape;
  std::vector<float> data;
};

struct GraphProgram {
  std::vector<GraphNode> nodes;  // topological order
  std::map<std::string, Initializer> initializers;
  std::vector<std::string> inputs;   // "ids", "mask"
  std::vector<std::string> outputs;  // "logits"
  nlohmann::json meta = nlohmann::json::object();  // model config and tokenizer hash

  // Throws on a dangling input, a duplicate id or an out-of-order reference.
  void validate() const;
  std::size_t node_count() const { return nodes.size(); }
  std::map<OpKind, int> op_histogram() const;

  Container to_container() const;
  static GraphProgram from_container(const Container& c);
  void save(const std::filesystem::path& path) const;
  static GraphProgram load(const std::filesystem::path& path);
  bool operator==(const GraphProgram&) const = default;
};

// Inference graph of forward(ckpt, ., Mode::Eval). Layer norms are emitted as
// their elementary ops, linear weights as transpose-of-constant, and every
// dropout site as a Dropout node.
GraphProgram export_graph(const Checkpoint& ckpt);

GraphProgram constant_fold(const GraphProgram& g);
GraphProgram eliminate_redundant(const GraphProgram& g);
GraphProgram fuse_ops(const GraphProgram& g);
// fold -> eliminate -> fuse repeated until the node count stops changing.
struct OptimizeResult {
  GraphProgram graph;
  int rounds = 0;
};
OptimizeResult optimize_graph(const GraphProgram& g, int max_rounds = 5);

// Linear / LinearGelu weights become per-row int8; the executor quantizes their
// input activations per tensor from the runtime range.
GraphProgram quantize_dynamic(const GraphProgram& g);

// Activation quantization used by the executor: value = scale * (q - zero_point).
struct ActivationQuant {
  float scale = 1.0f;
  std::int32_t zero_point = 0;
};
ActivationQuant activation_range(const float* x, std::int64_t n);

std::map<std::string, Value> execute(const GraphProgram& g, const std::map<std::string, Value>& inputs);
// ids/mask from a batch, returns the "logits" output.
Tensor run_graph(const GraphProgram& g, const Batch& batch);

// Bytes of Linear / LinearGelu weights as stored (int8 + f32 scales, or f32)
// over their f32 size.
double linear_weight_payload_ratio(const GraphProgram& g);

struct LatencyStats {
  double mean_seconds = 0.0;
  double p50_seconds = 0.0;
  int runs = 0;
  int threads = 1;
};
LatencyStats measure_latency(const GraphProgram& g, const Batch& batch, int warmup = 5, int runs = 30);

}  // namespace gcmp
