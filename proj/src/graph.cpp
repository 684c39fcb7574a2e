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

#include "gcmp/graph.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "gcmp/error.hpp"
#include "gcmp/kernels.hpp"

namespace gcmp {

namespace {

constexpr float kMaskedScore = -1e9f;
constexpr float kLayerNormEps = 1e-5f;

const std::pair<OpKind, const char*> kOpNames[] = {
    {OpKind::Gather, "Gather"},         {OpKind::Positions, "Positions"},
    {OpKind::MaskBias, "MaskBias"},     {OpKind::Add, "Add"},
    {OpKind::Sub, "Sub"},               {OpKind::Mul, "Mul"},
    {OpKind::Div, "Div"},               {OpKind::MatMul, "MatMul"},
    {OpKind::Transpose, "Transpose"},   {OpKind::ReduceMean, "ReduceMean"},
    {OpKind::Sqrt, "Sqrt"},             {OpKind::Gelu, "Gelu"},
    {OpKind::Tanh, "Tanh"},             {OpKind::Softmax, "Softmax"},
    {OpKind::Identity, "Identity"},     {OpKind::Dropout, "Dropout"},
    {OpKind::SplitHeads, "SplitHeads"}, {OpKind::MergeHeads, "MergeHeads"},
    {OpKind::SelectFirst, "SelectFirst"}, {OpKind::Linear, "Linear"},
    {OpKind::LinearGelu, "LinearGelu"}, {OpKind::LayerNorm, "LayerNorm"},
    {OpKind::AddLayerNorm, "AddLayerNorm"},
};

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

}  // namespace

std::string to_string(OpKind k) {
  for (const auto& [op, name] : kOpNames)
    if (op == k) return name;
  return "?";
}

OpKind parse_op_kind(const std::string& s) {
  for (const auto& [op, name] : kOpNames)
    if (s == name) return op;
  throw ValidationError("unknown graph op '" + s + "'");
}

// --- quantization primitives ---

QuantizedTensor QuantizedTensor::quantize_rows(const float* data, std::int64_t rows, std::int64_t cols) {
  QuantizedTensor q;
  q.shape = {rows, cols};
  q.values.resize(static_cast<std::size_t>(rows * cols));
  q.scales.resize(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    float mx = 0.0f;
    for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, std::abs(data[r * cols + c]));
    const float scale = mx > 0.0f ? mx / 127.0f : 1.0f;
    q.scales[r] = scale;
    for (std::int64_t c = 0; c < cols; ++c) {
      const float v = std::nearbyint(data[r * cols + c] / scale);
      q.values[r * cols + c] = static_cast<std::int8_t>(std::clamp(v, -127.0f, 127.0f));
    }
  }
  return q;
}

std::vector<float> QuantizedTensor::dequantize() const {
  std::vector<float> out(values.size());
  const std::int64_t cols = shape.at(1);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scales[i / static_cast<std::size_t>(cols)] * values[i];
  return out;
}

ActivationQuant activation_range(const float* x, std::int64_t n) {
  float lo = 0.0f, hi = 0.0f;
  for (std::int64_t i = 0; i < n; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  ActivationQuant a;
  if (hi == lo) return a;
  a.scale = (hi - lo) / 255.0f;
  a.zero_point = static_cast<std::int32_t>(std::clamp(std::nearbyint(-128.0f - lo / a.scale), -128.0f, 127.0f));
  return a;
}

// --- graph bookkeeping ---

void GraphProgram::validate() const {
  std::set<std::string> defined(inputs.begin(), inputs.end());
  for (const auto& [k, v] : initializers) {
    if (!defined.insert(k).second) throw ValidationError("graph id '" + k + "' defined twice");
  }
  for (const auto& n : nodes) {
    for (const auto& in : n.inputs) {
      if (!defined.count(in)) throw ValidationError("node '" + n.id + "' reads undefined '" + in + "'");
    }
    if (!defined.insert(n.id).second) throw ValidationError("graph id '" + n.id + "' defined twice");
  }
  for (const auto& o : outputs)
    if (!defined.count(o)) throw ValidationError("graph output '" + o + "' is undefined");
}

std::map<OpKind, int> GraphProgram::op_histogram() const {
  std::map<OpKind, int> h;
  for (const auto& n : nodes) ++h[n.op];
  return h;
}

Container GraphProgram::to_container() const {
  Container c;
  nlohmann::json nj = nlohmann::json::array();
  for (const auto& n : nodes) nj.push_back({{"id", n.id}, {"op", to_string(n.op)}, {"inputs", n.inputs}, {"attrs", n.attrs}});
  nlohmann::json ij = nlohmann::json::array();
  for (const auto& [name, init] : initializers) {
    ij.push_back({{"name", name}, {"shape", init.shape}, {"quantized", init.quantized}});
    TensorRecord r;
    r.name = name;
    if (init.quantized) {
      r.dtype = DType::I8;
      r.shape = init.q.shape;
      r.i8 = init.q.values;
      r.scales = init.q.scales;
    } else {
      r.shape = init.shape;
      r.f32 = init.f32;
    }
    c.tensors.push_back(std::move(r));
  }
  c.header = {{"kind", "graph"}, {"nodes", nj}, {"initializers", ij},
              {"inputs", inputs},  {"outputs", outputs}, {"meta", meta}};
  return c;
}

GraphProgram GraphProgram::from_container(const Container& c) {
  if (c.header.value("kind", "") != "graph") throw ValidationError("container is not a graph");
  GraphProgram g;
  for (const auto& n : c.header.at("nodes")) {
    g.nodes.push_back({n.at("id").get<std::string>(), parse_op_kind(n.at("op").get<std::string>()),
                       n.at("inputs").get<std::vector<std::string>>(), n.at("attrs")});
  }
  for (const auto& i : c.header.at("initializers")) {
    const auto name = i.at("name").get<std::string>();
    const auto& r = c.find(name);
    Initializer init;
    init.shape = i.at("shape").get<Shape>();
    init.quantized = i.at("quantized").get<bool>();
    if (init.quantized) {
      if (r.dtype != DType::I8) throw ValidationError("initializer '" + name + "' should be int8");
      init.q.shape = r.shape;
      init.q.values = r.i8;
      init.q.scales = r.scales;
    } else {
      if (r.dtype != DType::F32) throw ValidationError("initializer '" + name + "' should be f32");
      init.f32 = r.f32;
    }
    g.initializers.emplace(name, std::move(init));
  }
  g.inputs = c.header.at("inputs").get<std::vector<std::string>>();
  g.outputs = c.header.at("outputs").get<std::vector<std::string>>();
  g.meta = c.header.value("meta", nlohmann::json::object());
  g.validate();
  return g;
}

void GraphProgram::save(const std::filesystem::path& path) const { write_container(path, to_container()); }

GraphProgram GraphProgram::load(const std::filesystem::path& path) { return from_container(read_container(path)); }

// --- export ---

namespace {

class Builder {
 public:
  GraphProgram g;

  std::string node(OpKind op, std::vector<std::string> inputs, nlohmann::json attrs = nlohmann::json::object()) {
    std::string id = "n" + std::to_string(g.nodes.size()) + "." + to_string(op);
    std::transform(id.begin(), id.end(), id.begin(), [](unsigned char c) { return std::tolower(c); });
    g.nodes.push_back({id, op, std::move(inputs), std::move(attrs)});
    return g.nodes.back().id;
  }

  std::string param(const Checkpoint& ck, const std::string& name) {
    if (!g.initializers.count(name)) {
      const Tensor& t = ck.param(name);
      g.initializers.emplace(name, Initializer{t.shape(), t.storage(), false, {}});
    }
    return name;
  }

  std::string constant(const std::string& name, Shape shape, std::vector<float> data) {
    g.initializers.emplace(name, Initializer{std::move(shape), std::move(data), false, {}});
    return name;
  }

  // x @ W^T + b with W stored (out, in).
  std::string linear(const Checkpoint& ck, const std::string& x, const std::string& w, const std::string& b) {
    const std::string wt = node(OpKind::Transpose, {param(ck, w)});
    return node(OpKind::Add, {node(OpKind::MatMul, {x, wt}), param(ck, b)});
  }

  std::string layer_norm(const Checkpoint& ck, const std::string& x, const std::string& prefix) {
    if (!g.initializers.count("ln.eps")) constant("ln.eps", {1}, {kLayerNormEps});
    const std::string mean = node(OpKind::ReduceMean, {x});
    const std::string centred = node(OpKind::Sub, {x, mean});
    const std::string var = node(OpKind::ReduceMean, {node(OpKind::Mul, {centred, centred})});
    const std::string denom = node(OpKind::Sqrt, {node(OpKind::Add, {var, "ln.eps"})});
    const std::string normed = node(OpKind::Div, {centred, denom});
    return node(OpKind::Add, {node(OpKind::Mul, {normed, param(ck, prefix + ".g")}), param(ck, prefix + ".b")});
  }
};

}  // namespace

GraphProgram export_graph(const Checkpoint& ck) {
  ck.validate();
  const auto& cfg = ck.config;
  Builder b;
  b.g.inputs = {"ids", "mask"};
  b.g.meta = {{"config", cfg.to_json()}, {"tokenizer_hash", ck.tokenizer_hash}};

  std::string x = b.node(OpKind::Add, {b.node(OpKind::Gather, {b.param(ck, "embed.tok"), "ids"}),
                                       b.node(OpKind::Positions, {b.param(ck, "embed.pos"), "ids"})});
  x = b.node(OpKind::Dropout, {b.layer_norm(ck, x, "embed.ln")});
  const std::string bias = b.node(OpKind::MaskBias, {"mask"});
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    const nlohmann::json heads = {{"heads", cfg.heads[l]}};
    const std::string q = b.node(OpKind::SplitHeads, {b.linear(ck, x, pre + "attn.q.w", pre + "attn.q.b")}, heads);
    const std::string k = b.node(OpKind::SplitHeads, {b.linear(ck, x, pre + "attn.k.w", pre + "attn.k.b")}, heads);
    const std::string v = b.node(OpKind::SplitHeads, {b.linear(ck, x, pre + "attn.v.w", pre + "attn.v.b")}, heads);
    const std::string scale =
        b.constant(pre + "attn.scale", {1}, {1.0f / std::sqrt(static_cast<float>(cfg.head_dim))});
    std::string scores = b.node(OpKind::MatMul, {q, b.node(OpKind::Transpose, {k})});
    scores = b.node(OpKind::Add, {b.node(OpKind::Mul, {scores, scale}), bias});
    const std::string probs = b.node(OpKind::Dropout, {b.node(OpKind::Softmax, {scores})});
    const std::string ctx = b.node(OpKind::MergeHeads, {b.node(OpKind::MatMul, {probs, v})});
    const std::string attn = b.node(OpKind::Dropout, {b.linear(ck, ctx, pre + "attn.o.w", pre + "attn.o.b")});
    const std::string h1 = b.layer_norm(ck, b.node(OpKind::Add, {x, attn}), pre + "ln1");
    const std::string inner = b.node(OpKind::Gelu, {b.linear(ck, h1, pre + "ffn.w1", pre + "ffn.b1")});
    const std::string ffn = b.node(OpKind::Dropout, {b.linear(ck, inner, pre + "ffn.w2", pre + "ffn.b2")});
    x = b.layer_norm(ck, b.node(OpKind::Add, {h1, ffn}), pre + "ln2");
  }
  std::string out;
  switch (cfg.head.type) {
    case HeadType::MLM: {
      std::string t = b.node(OpKind::Gelu, {b.linear(ck, x, "head.mlm.dense.w", "head.mlm.dense.b")});
      t = b.layer_norm(ck, t, "head.mlm.ln");
      out = b.linear(ck, t, "embed.tok", "head.mlm.bias");
      break;
    }
    case HeadType::MultiLabel:
    case HeadType::SingleLabel:
    case HeadType::Regression: {
      const std::string first = b.node(OpKind::SelectFirst, {x});
      const std::string pooled =
          b.node(OpKind::Dropout, {b.node(OpKind::Tanh, {b.linear(ck, first, "head.pool.w", "head.pool.b")})});
      out = b.linear(ck, pooled, "head.out.w", "head.out.b");
      break;
    }
    case HeadType::TokenLabel:
      out = b.linear(ck, b.node(OpKind::Dropout, {x}), "head.out.w", "head.out.b");
      break;
  }
  b.g.outputs = {out};
  b.g.validate();
  return b.g;
}

// --- execution ---

namespace {

Value broadcast_binary(const Value& a, const Value& b, OpKind op) {
  auto apply = [op](float x, float y) {
    switch (op) {
      case OpKind::Add: return x + y;
      case OpKind::Sub: return x - y;
      case OpKind::Mul: return x * y;
      default: return x / y;
    }
  };
  Value out;
  if (a.shape == b.shape) {
    out.shape = a.shape;
    out.data.resize(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = apply(a.data[i], b.data[i]);
    return out;
  }
  const std::size_t rank = std::max(a.shape.size(), b.shape.size());
  Shape as(rank, 1), bs(rank, 1);
  std::copy(a.shape.begin(), a.shape.end(), as.begin() + static_cast<std::ptrdiff_t>(rank - a.shape.size()));
  std::copy(b.shape.begin(), b.shape.end(), bs.begin() + static_cast<std::ptrdiff_t>(rank - b.shape.size()));
  out.shape.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (as[d] != bs[d] && as[d] != 1 && bs[d] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a.shape) + " with " + shape_str(b.shape));
    }
    out.shape[d] = std::max(as[d], bs[d]);
  }
  const auto n = numel(out.shape);
  out.data.resize(static_cast<std::size_t>(n));
  // b is a trailing block of a: the common bias / positions case.
  const auto bn = static_cast<std::int64_t>(b.data.size());
  if (as == out.shape && bn > 0 && n % bn == 0 &&
      std::equal(b.shape.begin(), b.shape.end(), out.shape.end() - static_cast<std::ptrdiff_t>(b.shape.size()))) {
    for (std::int64_t i = 0; i < n; ++i) out.data[i] = apply(a.data[i], b.data[i % bn]);
    return out;
  }
  Shape sa(rank), sb(rank);
  std::int64_t ka = 1, kb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = as[d] == 1 ? 0 : ka;
    sb[d] = bs[d] == 1 ? 0 : kb;
    ka *= as[d];
    kb *= bs[d];
  }
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out.data[i] = apply(a.data[ia], b.data[ib]);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out.shape[d]) break;
      ia -= sa[d] * idx[d];
      ib -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

Value matmul(const Value& a, const Value& b) {
  if (a.shape.size() < 2 || b.shape.size() < 2) throw ShapeError("matmul needs rank >= 2");
  const std::int64_t m = a.shape[a.shape.size() - 2], k = a.shape.back();
  const std::int64_t kb = b.shape[b.shape.size() - 2], n = b.shape.back();
  if (k != kb) throw ShapeError("matmul inner dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Value out;
  out.shape = a.shape;
  out.shape.back() = n;
  out.data.resize(static_cast<std::size_t>(numel(out.shape)));
  if (b.shape.size() == 2) {
    kernels::gemm(a.data.data(), b.data.data(), out.data.data(), numel(a.shape) / k, n, k, false, false, false);
    return out;
  }
  if (!std::equal(a.shape.begin(), a.shape.end() - 2, b.shape.begin(), b.shape.end() - 2) ||
      a.shape.size() != b.shape.size()) {
    throw ShapeError("matmul batch dims " + shape_str(a.shape) + " x " + shape_str(b.shape));
  }
  const std::int64_t batches = numel(a.shape) / (m * k);
  for (std::int64_t i = 0; i < batches; ++i) {
    kernels::gemm(a.data.data() + i * m * k, b.data.data() + i * k * n, out.data.data() + i * m * n, m, n, k, false,
                  false, false);
  }
  return out;
}

Value transpose(const Value& a) {
  if (a.shape.size() < 2) throw ShapeError("transpose needs rank >= 2");
  const std::int64_t r = a.shape[a.shape.size() - 2], c = a.shape.back();
  Value out;
  out.shape = a.shape;
  std::swap(out.shape[out.shape.size() - 2], out.shape.back());
  out.data.resize(a.data.size());
  const std::int64_t batches = numel(a.shape) / std::max<std::int64_t>(1, r * c);
  for (std::int64_t b = 0; b < batches; ++b)
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.data[b * r * c + j * r + i] = a.data[b * r * c + i * c + j];
  return out;
}

Value unary(const Value& a, float (*f)(float)) {
  Value out{a.shape, std::vector<float>(a.data.size())};
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

Value layer_norm(const Value& x, const Value& g, const Value& b, float eps) {
  const std::int64_t cols = x.shape.back();
  if (static_cast<std::int64_t>(g.data.size()) != cols || static_cast<std::int64_t>(b.data.size()) != cols) {
    throw ShapeError("layer norm parameters do not match " + shape_str(x.shape));
  }
  Value out{x.shape, std::vector<float>(x.data.size())};
  kernels::layer_norm(x.data.data(), g.data.data(), b.data.data(), out.data.data(), nullptr, nullptr,
                      numel(x.shape) / cols, cols, eps);
  return out;
}

Value linear(const Value& x, const Initializer& w, const Value& bias, bool with_gelu) {
  const std::int64_t k = w.shape.at(0), n = w.shape.at(1);
  if (x.shape.empty() || x.shape.back() != k) throw ShapeError("linear input " + shape_str(x.shape));
  if (static_cast<std::int64_t>(bias.data.size()) != n) throw ShapeError("linear bias size");
  const std::int64_t m = numel(x.shape) / k;
  Value out;
  out.shape = x.shape;
  out.shape.back() = n;
  out.data.resize(static_cast<std::size_t>(m * n));
  if (!w.quantized) {
    kernels::gemm(x.data.data(), w.f32.data(), out.data.data(), m, n, k, false, false, false);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) out.data[i * n + j] += bias.data[j];
  } else {
    const ActivationQuant aq = activation_range(x.data.data(), m * k);
    std::vector<std::int8_t> xq(static_cast<std::size_t>(m * k));
    for (std::size_t i = 0; i < xq.size(); ++i) {
      const float v = std::nearbyint(x.data[i] / aq.scale) + static_cast<float>(aq.zero_point);
      xq[i] = static_cast<std::int8_t>(std::clamp(v, -128.0f, 127.0f));
    }
    std::vector<std::int32_t> acc(static_cast<std::size_t>(m * n));
    kernels::qgemm_nt(xq.data(), w.q.values.data(), acc.data(), m, n, k);
    std::vector<std::int32_t> row_sum(static_cast<std::size_t>(n), 0);
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t kk = 0; kk < k; ++kk) row_sum[j] += w.q.values[j * k + kk];
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const std::int32_t centred = acc[i * n + j] - aq.zero_point * row_sum[j];
        out.data[i * n + j] = aq.scale * w.q.scales[j] * static_cast<float>(centred) + bias.data[j];
      }
  }
  if (with_gelu) kernels::gelu(out.data.data(), out.data.data(), numel(out.shape));
  return out;
}

float attr_eps(const GraphNode& n) { return n.attrs.value("eps", kLayerNormEps); }

// Evaluates one node. `in` holds input values (null for a quantized initializer);
// `inits` the initializer behind each input, when there is one.
Value eval_node(const GraphNode& node, const std::vector<const Value*>& in,
                const std::vector<const Initializer*>& inits) {
  auto arg = [&](std::size_t i) -> const Value& {
    if (i >= in.size() || in[i] == nullptr) throw ValidationError("node '" + node.id + "' input " + std::to_string(i) + " unavailable");
    return *in[i];
  };
  switch (node.op) {
    case OpKind::Gather: {
      const Value& table = arg(0);
      const Value& ids = arg(1);
      const std::int64_t rows = table.shape.at(0), cols = table.shape.at(1);
      Value out;
      out.shape = ids.shape;
      out.shape.push_back(cols);
      out.data.resize(ids.data.size() * static_cast<std::size_t>(cols));
      for (std::size_t i = 0; i < ids.data.size(); ++i) {
        const auto id = static_cast<std::int64_t>(ids.data[i]);
        if (id < 0 || id >= rows || static_cast<float>(id) != ids.data[i]) {
          throw ValidationError("token id outside the embedding table");
        }
        std::copy_n(table.data.begin() + id * cols, cols, out.data.begin() + static_cast<std::ptrdiff_t>(i) * cols);
      }
      return out;
    }
    case OpKind::Positions: {
      const Value& table = arg(0);
      const std::int64_t s = arg(1).shape.at(1), cols = table.shape.at(1);
      if (s > table.shape.at(0)) throw ValidationError("sequence longer than the position table");
      return Value{{s, cols}, std::vector<float>(table.data.begin(), table.data.begin() + s * cols)};
    }
    case OpKind::MaskBias: {
      const Value& mask = arg(0);
      const std::int64_t b = mask.shape.at(0), s = mask.shape.at(1);
      Value out{{b, 1, s, s}, std::vector<float>(static_cast<std::size_t>(b * s * s))};
      for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t q = 0; q < s; ++q)
          for (std::int64_t k = 0; k < s; ++k)
            out.data[(i * s + q) * s + k] = mask.data[i * s + k] > 0.0f ? 0.0f : kMaskedScore;
      return out;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div:
      return broadcast_binary(arg(0), arg(1), node.op);
    case OpKind::MatMul: return matmul(arg(0), arg(1));
    case OpKind::Transpose: return transpose(arg(0));
    case OpKind::ReduceMean: {
      const Value& x = arg(0);
      const std::int64_t cols = x.shape.back(), rows = numel(x.shape) / cols;
      Value out;
      out.shape = x.shape;
      out.shape.back() = 1;
      out.data.resize(static_cast<std::size_t>(rows));
      for (std::int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) s += x.data[r * cols + c];
        out.data[r] = static_cast<float>(s / static_cast<double>(cols));
      }
      return out;
    }
    case OpKind::Sqrt: return unary(arg(0), [](float v) { return std::sqrt(v); });
    case OpKind::Tanh: return unary(arg(0), [](float v) { return std::tanh(v); });
    case OpKind::Gelu: {
      Value out{arg(0).shape, std::vector<float>(arg(0).data.size())};
      kernels::gelu(arg(0).data.data(), out.data.data(), numel(out.shape));
      return out;
    }
    case OpKind::Softmax: {
      const Value& x = arg(0);
      const std::int64_t cols = x.shape.back();
      Value out{x.shape, std::vector<float>(x.data.size())};
      kernels::softmax_rows(x.data.data(), out.data.data(), numel(x.shape) / cols, cols);
      return out;
    }
    case OpKind::Identity:
    case OpKind::Dropout:
      return arg(0);
    case OpKind::SplitHeads: {
      const Value& x = arg(0);
      const std::int64_t h = node.attrs.at("heads").get<std::int64_t>();
      const std::int64_t b = x.shape.at(0), s = x.shape.at(1), hd = x.shape.at(2);
      if (h < 1 || hd % h != 0) throw ShapeError("cannot split " + shape_str(x.shape) + " into heads");
      const std::int64_t d = hd / h;
      Value out{{b, h, s, d}, std::vector<float>(x.data.size())};
      for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t t = 0; t < s; ++t)
          for (std::int64_t j = 0; j < h; ++j)
            std::copy_n(x.data.begin() + ((i * s + t) * hd + j * d), d,
                        out.data.begin() + (((i * h + j) * s + t) * d));
      return out;
    }
    case OpKind::MergeHeads: {
      const Value& x = arg(0);
      const std::int64_t b = x.shape.at(0), h = x.shape.at(1), s = x.shape.at(2), d = x.shape.at(3);
      Value out{{b, s, h * d}, std::vector<float>(x.data.size())};
      for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < h; ++j)
          for (std::int64_t t = 0; t < s; ++t)
            std::copy_n(x.data.begin() + (((i * h + j) * s + t) * d), d,
                        out.data.begin() + ((i * s + t) * h * d + j * d));
      return out;
    }
    case OpKind::SelectFirst: {
      const Value& x = arg(0);
      const std::int64_t b = x.shape.at(0), s = x.shape.at(1), h = x.shape.at(2);
      Value out{{b, h}, std::vector<float>(static_cast<std::size_t>(b * h))};
      for (std::int64_t i = 0; i < b; ++i) std::copy_n(x.data.begin() + i * s * h, h, out.data.begin() + i * h);
      return out;
    }
    case OpKind::Linear:
    case OpKind::LinearGelu: {
      if (inits.size() < 2 || inits[1] == nullptr) throw ValidationError("linear weight must be an initializer");
      return linear(arg(0), *inits[1], arg(2), node.op == OpKind::LinearGelu);
    }
    case OpKind::LayerNorm: return layer_norm(arg(0), arg(1), arg(2), attr_eps(node));
    case OpKind::AddLayerNorm:
      return layer_norm(broadcast_binary(arg(0), arg(1), OpKind::Add), arg(2), arg(3), attr_eps(node));
  }
  throw ValidationError("unsupported op");
}

Value initializer_value(const Initializer& init) { return Value{init.shape, init.f32}; }

// Number of references to each id (node inputs plus graph outputs).
std::map<std::string, int> use_counts(const GraphProgram& g) {
  std::map<std::string, int> uses;
  for (const auto& n : g.nodes)
    for (const auto& in : n.inputs) ++uses[in];
  for (const auto& o : g.outputs) ++uses[o];
  return uses;
}

// Drops nodes and initializers that no output depends on.
void remove_dead(GraphProgram& g) {
  std::set<std::string> live(g.outputs.begin(), g.outputs.end());
  std::vector<bool> keep(g.nodes.size(), false);
  for (std::size_t i = g.nodes.size(); i-- > 0;) {
    if (!live.count(g.nodes[i].id)) continue;
    keep[i] = true;
    for (const auto& in : g.nodes[i].inputs) live.insert(in);
  }
  std::vector<GraphNode> nodes;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (keep[i]) nodes.push_back(std::move(g.nodes[i]));
  g.nodes = std::move(nodes);
  for (auto it = g.initializers.begin(); it != g.initializers.end();) {
    it = live.count(it->first) ? std::next(it) : g.initializers.erase(it);
  }
}

}  // namespace

std::map<std::string, Value> execute(const GraphProgram& g, const std::map<std::string, Value>& inputs) {
  for (const auto& name : g.inputs)
    if (!inputs.count(name)) throw ValidationError("missing graph input '" + name + "'");
  const auto& ids = inputs.at(g.inputs.front());
  for (const auto& name : g.inputs) {
    if (inputs.at(name).shape != ids.shape) throw ShapeError("graph inputs disagree in shape");
  }
  std::map<std::string, Value> values;
  std::map<std::string, Value> init_values;
  auto lookup = [&](const std::string& id, const Initializer** init) -> const Value* {
    *init = nullptr;
    if (auto it = values.find(id); it != values.end()) return &it->second;
    if (auto it = inputs.find(id); it != inputs.end()) return &it->second;
    auto ii = g.initializers.find(id);
    if (ii == g.initializers.end()) throw ValidationError("undefined graph id '" + id + "'");
    *init = &ii->second;
    if (ii->second.quantized) return nullptr;
    auto [pos, inserted] = init_values.try_emplace(id);
    if (inserted) pos->second = initializer_value(ii->second);
    return &pos->second;
  };
  for (const auto& node : g.nodes) {
    std::vector<const Value*> in;
    std::vector<const Initializer*> inits;
    for (const auto& id : node.inputs) {
      const Initializer* init = nullptr;
      in.push_back(lookup(id, &init));
      inits.push_back(init);
    }
    Value v = eval_node(node, in, inits);
    for (float f : v.data)
      if (!std::isfinite(f)) throw NumericError("non-finite value produced by node '" + node.id + "'");
    values.emplace(node.id, std::move(v));
  }
  std::map<std::string, Value> out;
  for (const auto& o : g.outputs) {
    const Initializer* init = nullptr;
    const Value* v = lookup(o, &init);
    if (v == nullptr) throw ValidationError("graph output '" + o + "' is a quantized constant");
    out.emplace(o, *v);
  }
  return out;
}

Tensor run_graph(const GraphProgram& g, const Batch& batch) {
  if (batch.size == 0 || batch.seq_len == 0) {
    const auto cfg = ModelConfig::from_json(g.meta.at("config"));
    const std::int64_t k = cfg.head.type == HeadType::MLM ? cfg.vocab_size : cfg.head.num_labels;
    if (cfg.head.sequence_level()) return Tensor::zeros({batch.size, k});
    return Tensor::zeros({batch.size, batch.seq_len, k});
  }
  const Shape shape{batch.size, batch.seq_len};
  std::map<std::string, Value> in;
  in["ids"] = Value{shape, std::vector<float>(batch.ids.begin(), batch.ids.end())};
  in["mask"] = Value{shape, batch.mask};
  auto out = execute(g, in);
  Value& v = out.at(g.outputs.at(0));
  return Tensor(v.shape, std::move(v.data));
}

// --- passes ---

GraphProgram constant_fold(const GraphProgram& g) {
  GraphProgram out = g;
  out.nodes.clear();
  const std::set<std::string> graph_inputs(g.inputs.begin(), g.inputs.end());
  for (const auto& node : g.nodes) {
    bool constant = !node.inputs.empty();
    for (const auto& in : node.inputs) {
      auto it = out.initializers.find(in);
      constant = constant && it != out.initializers.end() && !it->second.quantized;
    }
    if (!constant) {
      out.nodes.push_back(node);
      continue;
    }
    std::vector<Value> vals;
    std::vector<const Value*> in;
    std::vector<const Initializer*> inits;
    vals.reserve(node.inputs.size());
    for (const auto& id : node.inputs) {
      vals.push_back(initializer_value(out.initializers.at(id)));
      inits.push_back(&out.initializers.at(id));
    }
    for (const auto& v : vals) in.push_back(&v);
    Value v = eval_node(node, in, inits);
    out.initializers.emplace(node.id, Initializer{v.shape, std::move(v.data), false, {}});
  }
  remove_dead(out);
  return out;
}

GraphProgram eliminate_redundant(const GraphProgram& g) {
  GraphProgram out = g;
  out.nodes.clear();
  std::map<std::string, std::string> alias;
  std::map<std::string, std::size_t> produced_at;
  auto resolve = [&](std::string id) {
    for (auto it = alias.find(id); it != alias.end(); it = alias.find(id)) id = it->second;
    return id;
  };
  for (const auto& node : g.nodes) {
    GraphNode n = node;
    for (auto& in : n.inputs) in = resolve(in);
    if (n.op == OpKind::Identity || n.op == OpKind::Dropout) {
      alias[n.id] = n.inputs.at(0);
      continue;
    }
    if (n.op == OpKind::Transpose) {
      auto p = produced_at.find(n.inputs.at(0));
      if (p != produced_at.end() && out.nodes[p->second].op == OpKind::Transpose) {
        alias[n.id] = out.nodes[p->second].inputs.at(0);
        continue;
      }
    }
    produced_at[n.id] = out.nodes.size();
    out.nodes.push_back(std::move(n));
  }
  for (auto& o : out.outputs) o = resolve(o);
  remove_dead(out);
  return out;
}

namespace {

bool is_init(const GraphProgram& g, const std::string& id) { return g.initializers.count(id) != 0; }

}  // namespace

GraphProgram fuse_ops(const GraphProgram& g) {
  GraphProgram cur = g;
  for (bool changed = true; changed;) {
    changed = false;
    auto uses = use_counts(cur);
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < cur.nodes.size(); ++i) at[cur.nodes[i].id] = i;
    auto prod = [&](const std::string& id, OpKind op) -> const GraphNode* {
      auto it = at.find(id);
      if (it == at.end() || cur.nodes[it->second].op != op) return nullptr;
      return &cur.nodes[it->second];
    };
    std::set<std::string> dead;
    for (auto& n : cur.nodes) {
      if (dead.count(n.id)) continue;
      // layer norm: mean, centre, square, mean, +eps, sqrt, divide, scale, shift
      if (n.op == OpKind::Add && n.inputs.size() == 2 && is_init(cur, n.inputs[1])) {
        const GraphNode* scale = prod(n.inputs[0], OpKind::Mul);
        const GraphNode* div = scale && is_init(cur, scale->inputs[1]) && uses[scale->id] == 1
                                   ? prod(scale->inputs[0], OpKind::Div) : nullptr;
        const GraphNode* sqrt = div && uses[div->id] == 1 ? prod(div->inputs[1], OpKind::Sqrt) : nullptr;
        const GraphNode* add_eps = sqrt && uses[sqrt->id] == 1 ? prod(sqrt->inputs[0], OpKind::Add) : nullptr;
        const GraphNode* var = add_eps && uses[add_eps->id] == 1 && is_init(cur, add_eps->inputs[1]) &&
                                       cur.initializers.at(add_eps->inputs[1]).f32.size() == 1
                                   ? prod(add_eps->inputs[0], OpKind::ReduceMean) : nullptr;
        const GraphNode* sq = var && uses[var->id] == 1 ? prod(var->inputs[0], OpKind::Mul) : nullptr;
        const GraphNode* centre = sq && sq->inputs[0] == sq->inputs[1] && uses[sq->id] == 1 &&
                                          sq->inputs[0] == div->inputs[0]
                                      ? prod(sq->inputs[0], OpKind::Sub) : nullptr;
        const GraphNode* mean = centre && uses[centre->id] == 3 ? prod(centre->inputs[1], OpKind::ReduceMean) : nullptr;
        if (mean && uses[mean->id] == 1 && mean->inputs[0] == centre->inputs[0]) {
          const float eps = cur.initializers.at(add_eps->inputs[1]).f32[0];
          for (const GraphNode* d : {scale, div, sqrt, add_eps, var, sq, centre, mean}) dead.insert(d->id);
          n = GraphNode{n.id, OpKind::LayerNorm, {mean->inputs[0], scale->inputs[1], n.inputs[1]}, {{"eps", eps}}};
          changed = true;
          continue;
        }
      }
      // matmul + bias
      if (n.op == OpKind::Add && n.inputs.size() == 2) {
        for (int side = 0; side < 2; ++side) {
          const GraphNode* mm = prod(n.inputs[side], OpKind::MatMul);
          const std::string& bias = n.inputs[1 - side];
          if (!mm || uses[mm->id] != 1 || !is_init(cur, bias) || !is_init(cur, mm->inputs[1])) continue;
          const auto& w = cur.initializers.at(mm->inputs[1]);
          const auto& b = cur.initializers.at(bias);
          if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[1]) continue;
          dead.insert(mm->id);
          n = GraphNode{n.id, OpKind::Linear, {mm->inputs[0], mm->inputs[1], bias}, nlohmann::json::object()};
          changed = true;
          break;
        }
        if (n.op != OpKind::Add) continue;
      }
      if (n.op == OpKind::Gelu) {
        const GraphNode* lin = prod(n.inputs[0], OpKind::Linear);
        if (lin && uses[lin->id] == 1) {
          dead.insert(lin->id);
          n = GraphNode{n.id, OpKind::LinearGelu, lin->inputs, nlohmann::json::object()};
          changed = true;
          continue;
        }
      }
      if (n.op == OpKind::LayerNorm) {
        const GraphNode* add = prod(n.inputs[0], OpKind::Add);
        if (add && uses[add->id] == 1 && !is_init(cur, add->inputs[0]) && !is_init(cur, add->inputs[1])) {
          dead.insert(add->id);
          n = GraphNode{n.id, OpKind::AddLayerNorm, {add->inputs[0], add->inputs[1], n.inputs[1], n.inputs[2]},
                        n.attrs};
          changed = true;
          continue;
        }
      }
    }
    if (changed) {
      std::vector<GraphNode> kept;
      for (auto& n : cur.nodes)
        if (!dead.count(n.id)) kept.push_back(std::move(n));
      cur.nodes = std::move(kept);
      remove_dead(cur);
    }
  }
  return cur;
}

OptimizeResult optimize_graph(const GraphProgram& g, int max_rounds) {
  OptimizeResult r{g, 0};
  while (r.rounds < max_rounds) {
    GraphProgram next = fuse_ops(eliminate_redundant(constant_fold(r.graph)));
    ++r.rounds;
    const bool same = next == r.graph;
    r.graph = std::move(next);
    if (same) break;
  }
  return r;
}

GraphProgram quantize_dynamic(const GraphProgram& g) {
  GraphProgram out = g;
  std::set<std::string> weights, other_uses;
  for (const auto& n : g.nodes) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const bool weight_slot = (n.op == OpKind::Linear || n.op == OpKind::LinearGelu) && i == 1;
      (weight_slot ? weights : other_uses).insert(n.inputs[i]);
    }
  }
  for (const auto& o : g.outputs) other_uses.insert(o);
  for (const auto& name : weights) {
    if (other_uses.count(name)) continue;
    auto& init = out.initializers.at(name);
    if (init.quantized) continue;
    const std::int64_t k = init.shape.at(0), n = init.shape.at(1);
    std::vector<float> rows(init.f32.size());  // (N, K): one row per output unit
    for (std::int64_t i = 0; i < k; ++i)
      for (std::int64_t j = 0; j < n; ++j) rows[j * k + i] = init.f32[i * n + j];
    init.q = QuantizedTensor::quantize_rows(rows.data(), n, k);
    init.quantized = true;
    init.f32.clear();
  }
  return out;
}

double linear_weight_payload_ratio(const GraphProgram& g) {
  double stored = 0.0, dense = 0.0;
  std::set<std::string> seen;
  for (const auto& n : g.nodes) {
    if ((n.op != OpKind::Linear && n.op != OpKind::LinearGelu) || !seen.insert(n.inputs[1]).second) continue;
    const auto& w = g.initializers.at(n.inputs[1]);
    const double elems = static_cast<double>(numel(w.shape));
    dense += 4.0 * elems;
    stored += w.quantized ? elems + 4.0 * static_cast<double>(w.q.scales.size()) : 4.0 * elems;
  }
  if (dense == 0.0) throw ValidationError("graph has no linear weights");
  return stored / dense;
}

LatencyStats measure_latency(const GraphProgram& g, const Batch& batch, int warmup, int runs) {
  if (runs < 1) throw ValidationError("need at least one timed run");
  for (int i = 0; i < warmup; ++i) run_graph(g, batch);
  std::vector<double> t;
  for (int i = 0; i < runs; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run_graph(g, batch);
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  LatencyStats s;
  s.runs = runs;
  s.threads = kernels::num_threads();
  for (double v : t) s.mean_seconds += v;
  s.mean_seconds /= runs;
  std::sort(t.begin(), t.end());
  s.p50_seconds = runs % 2 ? t[runs / 2] : 0.5 * (t[runs / 2 - 1] + t[runs / 2]);
  return s;
}

}  // namespace gcmp
