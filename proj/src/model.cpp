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

#include "gcmp/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gcmp/error.hpp"
#include "gcmp/ops.hpp"

namespace gcmp {

namespace {

constexpr float kInitStd = 0.02f;
constexpr float kMaskedScore = -1e9f;

Tensor init_weight(Shape shape, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = rng.truncated_normal(kInitStd);
  return Tensor(std::move(shape), std::move(v));
}

// Copies the listed rows (axis 0) or columns (axis 1) of a matrix, or entries
// of a vector.
Tensor gather(const Tensor& t, int axis, const std::vector<int>& keep) {
  const auto src = t.data();
  if (t.rank() == 1) {
    std::vector<float> out;
    out.reserve(keep.size());
    for (int i : keep) out.push_back(src[static_cast<std::size_t>(i)]);
    return Tensor(Shape{static_cast<std::int64_t>(keep.size())}, std::move(out));
  }
  const std::int64_t rows = t.dim(0), cols = t.dim(1);
  std::vector<float> out;
  if (axis == 0) {
    out.reserve(keep.size() * static_cast<std::size_t>(cols));
    for (int r : keep) out.insert(out.end(), src.begin() + r * cols, src.begin() + (r + 1) * cols);
    return Tensor(Shape{static_cast<std::int64_t>(keep.size()), cols}, std::move(out));
  }
  out.reserve(static_cast<std::size_t>(rows) * keep.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (int c : keep) out.push_back(src[static_cast<std::size_t>(r * cols + c)]);
  return Tensor(Shape{rows, static_cast<std::int64_t>(keep.size())}, std::move(out));
}

// Complement of `removed` in [0, n), validated.
std::vector<int> survivors(int n, const std::vector<int>& removed, const std::string& what) {
  std::set<int> drop;
  for (int r : removed) {
    if (r < 0 || r >= n) throw ValidationError(what + " index " + std::to_string(r) + " out of range");
    drop.insert(r);
  }
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (!drop.count(i)) keep.push_back(i);
  if (keep.empty()) throw ValidationError("removing every " + what + " would empty a layer");
  return keep;
}

bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

void add_head_params(std::map<std::string, Tensor>& p, const ModelConfig& cfg, Rng& rng) {
  const int h = cfg.hidden;
  switch (cfg.head.type) {
    case HeadType::MLM:
      p["head.mlm.dense.w"] = init_weight({h, h}, rng);
      p["head.mlm.dense.b"] = Tensor::zeros({h});
      p["head.mlm.ln.g"] = Tensor::filled({h}, 1.0f);
      p["head.mlm.ln.b"] = Tensor::zeros({h});
      p["head.mlm.bias"] = Tensor::zeros({cfg.vocab_size});
      break;
    case HeadType::MultiLabel:
    case HeadType::SingleLabel:
    case HeadType::Regression:
      p["head.pool.w"] = init_weight({h, h}, rng);
      p["head.pool.b"] = Tensor::zeros({h});
      p["head.out.w"] = init_weight({cfg.head.num_labels, h}, rng);
      p["head.out.b"] = Tensor::zeros({cfg.head.num_labels});
      break;
    case HeadType::TokenLabel:
      p["head.out.w"] = init_weight({cfg.head.num_labels, h}, rng);
      p["head.out.b"] = Tensor::zeros({cfg.head.num_labels});
      break;
  }
}

std::map<std::string, Shape> expected_shapes(const ModelConfig& cfg) {
  std::map<std::string, Shape> s;
  const std::int64_t h = cfg.hidden;
  s["embed.tok"] = {cfg.vocab_size, h};
  s["embed.pos"] = {cfg.max_positions, h};
  s["embed.ln.g"] = {h};
  s["embed.ln.b"] = {h};
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    const std::int64_t a = static_cast<std::int64_t>(cfg.heads[l]) * cfg.head_dim;
    const std::int64_t f = cfg.ffn_dims[l];
    for (const char* m : {"q", "k", "v"}) {
      s[p + "attn." + m + ".w"] = {a, h};
      s[p + "attn." + m + ".b"] = {a};
    }
    s[p + "attn.o.w"] = {h, a};
    s[p + "attn.o.b"] = {h};
    s[p + "ffn.w1"] = {f, h};
    s[p + "ffn.b1"] = {f};
    s[p + "ffn.w2"] = {h, f};
    s[p + "ffn.b2"] = {h};
    for (const char* n : {"ln1", "ln2"}) {
      s[p + n + ".g"] = {h};
      s[p + n + ".b"] = {h};
    }
  }
  const std::int64_t k = cfg.head.num_labels;
  switch (cfg.head.type) {
    case HeadType::MLM:
      s["head.mlm.dense.w"] = {h, h};
      s["head.mlm.dense.b"] = {h};
      s["head.mlm.ln.g"] = {h};
      s["head.mlm.ln.b"] = {h};
      s["head.mlm.bias"] = {cfg.vocab_size};
      break;
    case HeadType::MultiLabel:
    case HeadType::SingleLabel:
    case HeadType::Regression:
      s["head.pool.w"] = {h, h};
      s["head.pool.b"] = {h};
      s["head.out.w"] = {k, h};
      s["head.out.b"] = {k};
      break;
    case HeadType::TokenLabel:
      s["head.out.w"] = {k, h};
      s["head.out.b"] = {k};
      break;
  }
  return s;
}

}  // namespace

// --- HeadKind / ModelConfig ---

std::string to_string(HeadType t) {
  switch (t) {
    case HeadType::MLM: return "mlm";
    case HeadType::MultiLabel: return "multi_label";
    case HeadType::SingleLabel: return "single_label";
    case HeadType::Regression: return "regression";
    case HeadType::TokenLabel: return "token_label";
  }
  return "?";
}

HeadType parse_head_type(const std::string& s) {
  for (auto t : {HeadType::MLM, HeadType::MultiLabel, HeadType::SingleLabel, HeadType::Regression,
                 HeadType::TokenLabel})
    if (to_string(t) == s) return t;
  throw ValidationError("unknown head kind '" + s + "'");
}

void HeadKind::validate() const {
  switch (type) {
    case HeadType::MLM:
      if (num_labels != 0) throw ValidationError("MLM head takes no label count");
      break;
    case HeadType::Regression:
      if (num_labels != 1) throw ValidationError("regression head has exactly one output");
      break;
    default:
      if (num_labels < 2) throw ValidationError("classification heads need at least 2 labels");
  }
}

ModelConfig ModelConfig::uniform(int layers, int hidden, int heads, int vocab_size, int max_positions,
                                 HeadKind head, float dropout) {
  if (heads <= 0 || hidden % heads != 0) {
    throw ValidationError("hidden " + std::to_string(hidden) + " not divisible by heads " +
                          std::to_string(heads));
  }
  ModelConfig c;
  c.num_layers = layers;
  c.hidden = hidden;
  c.head_dim = hidden / heads;
  c.heads.assign(static_cast<std::size_t>(std::max(layers, 0)), heads);
  c.ffn_dims.assign(static_cast<std::size_t>(std::max(layers, 0)), 4 * hidden);
  c.vocab_size = vocab_size;
  c.max_positions = max_positions;
  c.dropout = dropout;
  c.head = head;
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (num_layers < 0) throw ValidationError("negative layer count");
  if (hidden <= 0 || head_dim <= 0) throw ValidationError("hidden and head_dim must be positive");
  if (static_cast<int>(heads.size()) != num_layers || static_cast<int>(ffn_dims.size()) != num_layers) {
    throw ValidationError("per-layer head/ffn lists must have num_layers entries");
  }
  for (int l = 0; l < num_layers; ++l) {
    if (heads[l] < 1 || ffn_dims[l] < 1) {
      throw ValidationError("layer " + std::to_string(l) + " needs at least one head and one neuron");
    }
  }
  if (vocab_size <= 0 || max_positions <= 0) throw ValidationError("vocab and positions must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ValidationError("dropout must be in [0, 1)");
  head.validate();
}

int ModelConfig::total_heads() const {
  int t = 0;
  for (int h : heads) t += h;
  return t;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_layers", num_layers}, {"hidden", hidden},       {"head_dim", head_dim},
          {"heads", heads},           {"ffn_dims", ffn_dims},   {"vocab_size", vocab_size},
          {"max_positions", max_positions}, {"dropout", dropout},
          {"head", {{"type", to_string(head.type)}, {"num_labels", head.num_labels}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.heads = j.at("heads").get<std::vector<int>>();
    c.ffn_dims = j.at("ffn_dims").get<std::vector<int>>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.dropout = j.at("dropout").get<float>();
    c.head.type = parse_head_type(j.at("head").at("type").get<std::string>());
    c.head.num_labels = j.at("head").at("num_labels").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelSize parse_model_size(const std::string& s) {
  if (s == "large") return ModelSize::Large;
  if (s == "base") return ModelSize::Base;
  if (s == "small") return ModelSize::Small;
  if (s == "tiny") return ModelSize::Tiny;
  throw ValidationError("unknown model size '" + s + "'");
}

ModelConfig family_config(ModelSize size, int vocab_size, int max_positions, HeadKind head,
                          int hidden_divisor) {
  int layers = 0, hidden = 0, heads = 0;
  switch (size) {
    case ModelSize::Large: layers = 24, hidden = 1024, heads = 16; break;
    case ModelSize::Base: layers = 12, hidden = 512, heads = 8; break;
    case ModelSize::Small: layers = 6, hidden = 256, heads = 4; break;
    case ModelSize::Tiny: layers = 4, hidden = 128, heads = 4; break;
  }
  if (hidden_divisor <= 0 || hidden % hidden_divisor != 0) throw ValidationError("bad hidden divisor");
  return ModelConfig::uniform(layers, hidden / hidden_divisor, heads, vocab_size, max_positions, head);
}

std::int64_t count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  std::int64_t n = 0;
  for (const auto& [name, shape] : expected_shapes(cfg)) n += numel_of(shape);
  return n;
}

// --- Checkpoint ---

std::string layer_prefix(int layer) { return "layer." + std::to_string(layer) + "."; }

Checkpoint::Checkpoint(const Checkpoint& other)
    : config(other.config), tokenizer_hash(other.tokenizer_hash) {
  for (const auto& [k, v] : other.params) params.emplace(k, v.clone());
}

Checkpoint& Checkpoint::operator=(const Checkpoint& other) {
  if (this != &other) {
    Checkpoint copy(other);
    *this = std::move(copy);
  }
  return *this;
}

const Tensor& Checkpoint::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("checkpoint has no parameter '" + name + "'");
  return it->second;
}

std::int64_t Checkpoint::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [k, v] : params) n += v.numel();
  return n;
}

std::vector<Tensor> Checkpoint::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [k, v] : params) out.push_back(v);
  return out;
}

void Checkpoint::set_requires_grad(bool value) {
  for (auto& [k, v] : params) v.set_requires_grad(value);
}

void Checkpoint::validate() const {
  config.validate();
  const auto want = expected_shapes(config);
  if (want.size() != params.size()) {
    for (const auto& [k, v] : params)
      if (!want.count(k)) throw ValidationError("unexpected parameter '" + k + "'");
  }
  for (const auto& [name, shape] : want) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", config implies " + shape_str(shape));
    }
  }
}

Container Checkpoint::to_container() const {
  Container c;
  c.header = {{"kind", "checkpoint"}, {"config", config.to_json()}, {"tokenizer_hash", tokenizer_hash}};
  for (const auto& [k, v] : params) c.tensors.push_back(TensorRecord::from_tensor(k, v));
  return c;
}

Checkpoint Checkpoint::from_container(const Container& c) {
  if (c.header.value("kind", "") != "checkpoint") throw ValidationError("container is not a checkpoint");
  Checkpoint ck;
  ck.config = ModelConfig::from_json(c.header.at("config"));
  ck.tokenizer_hash = c.header.value("tokenizer_hash", "");
  for (const auto& t : c.tensors) ck.params.emplace(t.name, t.to_tensor());
  ck.validate();
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_container(path, to_container()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return from_container(read_container(path));
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.config == b.config) || a.tokenizer_hash != b.tokenizer_hash) return false;
  if (a.params.size() != b.params.size()) return false;
  for (const auto& [k, v] : a.params) {
    auto it = b.params.find(k);
    if (it == b.params.end() || !bit_equal(v, it->second)) return false;
  }
  return true;
}

Checkpoint init_model(const ModelConfig& cfg, std::uint64_t seed, std::string tokenizer_hash) {
  cfg.validate();
  Rng rng(seed);
  Checkpoint ck;
  ck.config = cfg;
  ck.tokenizer_hash = std::move(tokenizer_hash);
  auto& p = ck.params;
  const int h = cfg.hidden;
  p["embed.tok"] = init_weight({cfg.vocab_size, h}, rng);
  p["embed.pos"] = init_weight({cfg.max_positions, h}, rng);
  p["embed.ln.g"] = Tensor::filled({h}, 1.0f);
  p["embed.ln.b"] = Tensor::zeros({h});
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    const int a = cfg.heads[l] * cfg.head_dim;
    const int f = cfg.ffn_dims[l];
    for (const char* m : {"q", "k", "v"}) {
      p[pre + "attn." + m + ".w"] = init_weight({a, h}, rng);
      p[pre + "attn." + m + ".b"] = Tensor::zeros({a});
    }
    p[pre + "attn.o.w"] = init_weight({h, a}, rng);
    p[pre + "attn.o.b"] = Tensor::zeros({h});
    p[pre + "ffn.w1"] = init_weight({f, h}, rng);
    p[pre + "ffn.b1"] = Tensor::zeros({f});
    p[pre + "ffn.w2"] = init_weight({h, f}, rng);
    p[pre + "ffn.b2"] = Tensor::zeros({h});
    for (const char* n : {"ln1", "ln2"}) {
      p[pre + n + ".g"] = Tensor::filled({h}, 1.0f);
      p[pre + n + ".b"] = Tensor::zeros({h});
    }
  }
  add_head_params(p, cfg, rng);
  return ck;
}

// --- forward ---

Batch Batch::from_sequences(const std::vector<std::vector<TokenId>>& seqs) {
  Batch b;
  b.size = static_cast<std::int64_t>(seqs.size());
  for (const auto& s : seqs) b.seq_len = std::max<std::int64_t>(b.seq_len, static_cast<std::int64_t>(s.size()));
  b.ids.assign(static_cast<std::size_t>(b.size * b.seq_len), SpecialIds::kPad);
  b.mask.assign(b.ids.size(), 0.0f);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (std::size_t j = 0; j < seqs[i].size(); ++j) {
      b.ids[i * b.seq_len + j] = seqs[i][j];
      b.mask[i * b.seq_len + j] = 1.0f;
    }
  return b;
}

UnitMask UnitMask::all_on(const ModelConfig& cfg) {
  UnitMask m;
  for (int l = 0; l < cfg.num_layers; ++l) {
    m.head_gates.emplace_back(cfg.heads[l], 1.0f);
    m.neuron_gates.emplace_back(cfg.ffn_dims[l], 1.0f);
  }
  return m;
}

Tensor embed(const Checkpoint& ck, const Batch& batch, Mode mode, Rng& rng) {
  const auto& cfg = ck.config;
  if (batch.seq_len > cfg.max_positions) {
    throw ValidationError("sequence length " + std::to_string(batch.seq_len) + " exceeds max_positions " +
                          std::to_string(cfg.max_positions));
  }
  if (static_cast<std::int64_t>(batch.ids.size()) != batch.size * batch.seq_len ||
      batch.mask.size() != batch.ids.size()) {
    throw ShapeError("batch ids/mask do not match size x seq_len");
  }
  for (TokenId id : batch.ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg.vocab_size));
    }
  }
  std::vector<TokenId> pos(batch.ids.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<TokenId>(i % batch.seq_len);
  const Shape prefix{batch.size, batch.seq_len};
  Tensor x = ops::add(ops::embedding(ck.param("embed.tok"), batch.ids, prefix),
                      ops::embedding(ck.param("embed.pos"), pos, prefix));
  x = ops::layer_norm(x, ck.param("embed.ln.g"), ck.param("embed.ln.b"));
  return ops::dropout(x, cfg.dropout, rng, mode == Mode::Train);
}

Tensor attention_bias(const Batch& batch) {
  const std::int64_t b = batch.size, s = batch.seq_len;
  std::vector<float> bias(static_cast<std::size_t>(b * s * s));
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t q = 0; q < s; ++q)
      for (std::int64_t k = 0; k < s; ++k)
        bias[(i * s + q) * s + k] = batch.mask[i * s + k] > 0.0f ? 0.0f : kMaskedScore;
  return Tensor(Shape{b, s, s}, std::move(bias));
}

Tensor encoder_layer(const Checkpoint& ck, int layer, const Tensor& x, const Tensor& bias, Mode mode,
                     Rng& rng, const UnitMask* mask) {
  const auto& cfg = ck.config;
  const std::string pre = layer_prefix(layer);
  const bool train = mode == Mode::Train;
  const int nh = cfg.heads[layer], dh = cfg.head_dim;
  const auto P = [&](const std::string& n) -> const Tensor& { return ck.param(pre + n); };

  const Tensor q = ops::linear(x, P("attn.q.w"), P("attn.q.b"));
  const Tensor k = ops::linear(x, P("attn.k.w"), P("attn.k.b"));
  const Tensor v = ops::linear(x, P("attn.v.w"), P("attn.v.b"));
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<std::size_t>(nh));
  for (int h = 0; h < nh; ++h) {
    const Tensor qh = ops::slice(q, 2, h * dh, dh);
    const Tensor kh = ops::slice(k, 2, h * dh, dh);
    const Tensor vh = ops::slice(v, 2, h * dh, dh);
    Tensor scores = ops::add(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt), bias);
    Tensor probs = ops::dropout(ops::softmax(scores), cfg.dropout, rng, train);
    Tensor c = ops::matmul(probs, vh);
    if (mask && !mask->head_gates.empty()) c = ops::scale(c, mask->head_gates[layer][h]);
    ctx.push_back(std::move(c));
  }
  const Tensor merged = nh == 1 ? ctx[0] : ops::concat(ctx, 2);
  Tensor attn = ops::dropout(ops::linear(merged, P("attn.o.w"), P("attn.o.b")), cfg.dropout, rng, train);
  Tensor h1 = ops::layer_norm(ops::add(x, attn), P("ln1.g"), P("ln1.b"));

  Tensor inner = ops::gelu(ops::linear(h1, P("ffn.w1"), P("ffn.b1")));
  if (mask && !mask->neuron_gates.empty()) {
    const auto& g = mask->neuron_gates[layer];
    inner = ops::mul(inner, Tensor(Shape{static_cast<std::int64_t>(g.size())}, g));
  }
  Tensor ffn = ops::dropout(ops::linear(inner, P("ffn.w2"), P("ffn.b2")), cfg.dropout, rng, train);
  return ops::layer_norm(ops::add(h1, ffn), P("ln2.g"), P("ln2.b"));
}

Tensor task_head(const Checkpoint& ck, const Tensor& hidden, Mode mode, Rng& rng) {
  const auto& cfg = ck.config;
  const bool train = mode == Mode::Train;
  switch (cfg.head.type) {
    case HeadType::MLM: {
      Tensor t = ops::gelu(ops::linear(hidden, ck.param("head.mlm.dense.w"), ck.param("head.mlm.dense.b")));
      t = ops::layer_norm(t, ck.param("head.mlm.ln.g"), ck.param("head.mlm.ln.b"));
      return ops::linear(t, ck.param("embed.tok"), ck.param("head.mlm.bias"));
    }
    case HeadType::MultiLabel:
    case HeadType::SingleLabel:
    case HeadType::Regression: {
      const std::int64_t b = hidden.dim(0);
      Tensor first = ops::reshape(ops::slice(hidden, 1, 0, 1), {b, cfg.hidden});
      Tensor pooled = ops::tanh(ops::linear(first, ck.param("head.pool.w"), ck.param("head.pool.b")));
      pooled = ops::dropout(pooled, cfg.dropout, rng, train);
      return ops::linear(pooled, ck.param("head.out.w"), ck.param("head.out.b"));
    }
    case HeadType::TokenLabel: {
      Tensor t = ops::dropout(hidden, cfg.dropout, rng, train);
      return ops::linear(t, ck.param("head.out.w"), ck.param("head.out.b"));
    }
  }
  throw ValidationError("unknown head kind");
}

Tensor forward(const Checkpoint& ck, const Batch& batch, const ForwardOptions& opts) {
  const auto& cfg = ck.config;
  if (opts.mask) {
    const auto& m = *opts.mask;
    if ((!m.head_gates.empty() && static_cast<int>(m.head_gates.size()) != cfg.num_layers) ||
        (!m.neuron_gates.empty() && static_cast<int>(m.neuron_gates.size()) != cfg.num_layers)) {
      throw ShapeError("unit mask does not cover every layer");
    }
    for (int l = 0; l < cfg.num_layers; ++l) {
      if ((!m.head_gates.empty() && static_cast<int>(m.head_gates[l].size()) != cfg.heads[l]) ||
          (!m.neuron_gates.empty() && static_cast<int>(m.neuron_gates[l].size()) != cfg.ffn_dims[l])) {
        throw ShapeError("unit mask size disagrees with layer " + std::to_string(l));
      }
    }
  }
  Rng rng(opts.seed);
  if (batch.size == 0 || batch.seq_len == 0) {
    const std::int64_t k = cfg.head.type == HeadType::MLM ? cfg.vocab_size : cfg.head.num_labels;
    if (cfg.head.sequence_level()) return Tensor::zeros({batch.size, k});
    return Tensor::zeros({batch.size, batch.seq_len, k});
  }
  Tensor x = embed(ck, batch, opts.mode, rng);
  const Tensor bias = attention_bias(batch);
  for (int l = 0; l < cfg.num_layers; ++l) x = encoder_layer(ck, l, x, bias, opts.mode, rng, opts.mask);
  return task_head(ck, x, opts.mode, rng);
}

// --- surgery ---

Checkpoint reshape_embeddings(const Checkpoint& ck, const VocabPruneResult& prune) {
  if (static_cast<std::size_t>(ck.config.vocab_size) != prune.original_size()) {
    throw ValidationError("checkpoint vocabulary (" + std::to_string(ck.config.vocab_size) +
                          ") does not match the pruned tokenizer's original size (" +
                          std::to_string(prune.original_size()) + ")");
  }
  std::vector<int> keep;
  keep.reserve(prune.kept_old_ids.size());
  for (TokenId id : prune.kept_old_ids) {
    if (id < 0 || id >= ck.config.vocab_size) throw ValidationError("kept id out of range");
    keep.push_back(id);
  }
  Checkpoint out(ck);
  out.config.vocab_size = static_cast<int>(keep.size());
  out.params["embed.tok"] = gather(ck.param("embed.tok"), 0, keep);
  if (ck.has("head.mlm.bias")) out.params["head.mlm.bias"] = gather(ck.param("head.mlm.bias"), 0, keep);
  out.tokenizer_hash = prune.pruned_tokenizer.fingerprint();
  return out;
}

Checkpoint extract_layers(const Checkpoint& teacher, std::span<const int> indices,
                          const Checkpoint* head_donor) {
  const auto& tc = teacher.config;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= tc.num_layers) {
      throw ValidationError("layer index " + std::to_string(indices[i]) + " out of range for " +
                            std::to_string(tc.num_layers) + " layers");
    }
    if (i > 0 && indices[i] <= indices[i - 1]) throw ValidationError("layer indices must be strictly increasing");
  }
  Checkpoint out;
  out.config = tc;
  out.tokenizer_hash = teacher.tokenizer_hash;
  out.config.num_layers = static_cast<int>(indices.size());
  out.config.heads.clear();
  out.config.ffn_dims.clear();
  for (int src : indices) {
    out.config.heads.push_back(tc.heads[src]);
    out.config.ffn_dims.push_back(tc.ffn_dims[src]);
  }
  for (const auto& [name, t] : teacher.params)
    if (name.rfind("embed.", 0) == 0) out.params.emplace(name, t.clone());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::string from = layer_prefix(indices[j]);
    const std::string to = layer_prefix(static_cast<int>(j));
    for (const auto& [name, t] : teacher.params)
      if (name.rfind(from, 0) == 0) out.params.emplace(to + name.substr(from.size()), t.clone());
  }
  const Checkpoint& donor = head_donor ? *head_donor : teacher;
  out.config.head = donor.config.head;
  for (const auto& [name, t] : donor.params)
    if (is_head_param(name)) out.params.emplace(name, t.clone());
  out.validate();
  return out;
}

Checkpoint remove_heads(const Checkpoint& ck, const std::vector<std::vector<int>>& per_layer) {
  const auto& cfg = ck.config;
  if (static_cast<int>(per_layer.size()) != cfg.num_layers) throw ValidationError("need one head list per layer");
  Checkpoint out(ck);
  const int dh = cfg.head_dim;
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (per_layer[l].empty()) continue;
    const auto heads = survivors(cfg.heads[l], per_layer[l], "head");
    std::vector<int> rows;
    for (int h : heads)
      for (int d = 0; d < dh; ++d) rows.push_back(h * dh + d);
    const std::string pre = layer_prefix(l);
    for (const char* m : {"q", "k", "v"}) {
      out.params[pre + "attn." + m + ".w"] = gather(ck.param(pre + "attn." + m + ".w"), 0, rows);
      out.params[pre + "attn." + m + ".b"] = gather(ck.param(pre + "attn." + m + ".b"), 0, rows);
    }
    out.params[pre + "attn.o.w"] = gather(ck.param(pre + "attn.o.w"), 1, rows);
    out.config.heads[l] = static_cast<int>(heads.size());
  }
  return out;
}

Checkpoint remove_ffn_neurons(const Checkpoint& ck, const std::vector<std::vector<int>>& per_layer) {
  const auto& cfg = ck.config;
  if (static_cast<int>(per_layer.size()) != cfg.num_layers) throw ValidationError("need one neuron list per layer");
  Checkpoint out(ck);
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (per_layer[l].empty()) continue;
    const auto keep = survivors(cfg.ffn_dims[l], per_layer[l], "neuron");
    const std::string pre = layer_prefix(l);
    out.params[pre + "ffn.w1"] = gather(ck.param(pre + "ffn.w1"), 0, keep);
    out.params[pre + "ffn.b1"] = gather(ck.param(pre + "ffn.b1"), 0, keep);
    out.params[pre + "ffn.w2"] = gather(ck.param(pre + "ffn.w2"), 1, keep);
    out.config.ffn_dims[l] = static_cast<int>(keep.size());
  }
  return out;
}

Checkpoint with_task_head(const Checkpoint& body, HeadKind head, std::uint64_t seed) {
  head.validate();
  Checkpoint out;
  out.config = body.config;
  out.config.head = head;
  out.tokenizer_hash = body.tokenizer_hash;
  for (const auto& [name, t] : body.params)
    if (!is_head_param(name)) out.params.emplace(name, t.clone());
  Rng rng(seed);
  add_head_params(out.params, out.config, rng);
  return out;
}

Checkpoint with_head_from(const Checkpoint& body, const Checkpoint& donor) {
  if (donor.config.hidden != body.config.hidden) throw ShapeError("head donor has a different hidden size");
  Checkpoint out;
  out.config = body.config;
  out.config.head = donor.config.head;
  out.tokenizer_hash = body.tokenizer_hash;
  for (const auto& [name, t] : body.params)
    if (!is_head_param(name)) out.params.emplace(name, t.clone());
  for (const auto& [name, t] : donor.params)
    if (is_head_param(name)) out.params.emplace(name, t.clone());
  out.validate();
  return out;
}

}  // namespace gcmp
