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

// Plain-loop double-precision encoder forward, written from the model
// definition without any library op. Used as the oracle for the model, the
// exported graph and the pruned-vs-masked equivalences.

#include <cmath>
#include <vector>

#include "gcmp/model.hpp"

namespace gcmp::testing {

using Mat = std::vector<std::vector<double>>;  // rows x cols

inline Mat param_mat(const Checkpoint& ck, const std::string& name) {
  const Tensor& t = ck.param(name);
  const auto rows = t.rank() == 1 ? 1 : t.dim(0);
  const auto cols = t.rank() == 1 ? t.dim(0) : t.dim(1);
  Mat m(static_cast<std::size_t>(rows), std::vector<double>(static_cast<std::size_t>(cols)));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m[r][c] = t.data()[r * cols + c];
  return m;
}

// x (n, in) times w(out, in)^T + b
inline Mat ref_linear(const Mat& x, const Mat& w, const std::vector<double>& b) {
  Mat y(x.size(), std::vector<double>(w.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < w.size(); ++o) {
      double s = b.empty() ? 0.0 : b[o];
      for (std::size_t k = 0; k < w[o].size(); ++k) s += x[i][k] * w[o][k];
      y[i][o] = s;
    }
  return y;
}

inline void ref_layer_norm(Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  for (auto& row : x) {
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    const double r = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) * r * g[j] + b[j];
  }
}

inline double ref_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// Logits for one sequence: MLM (S, V), sequence heads (1, k), token head (S, k).
inline Mat reference_forward(const Checkpoint& ck, const std::vector<TokenId>& ids,
                             const std::vector<float>& valid, const UnitMask* mask = nullptr) {
  const auto& cfg = ck.config;
  const std::size_t s = ids.size();
  const auto tok = param_mat(ck, "embed.tok");
  const auto pos = param_mat(ck, "embed.pos");
  auto vec = [&](const std::string& n) { return param_mat(ck, n)[0]; };
  Mat x(s, std::vector<double>(static_cast<std::size_t>(cfg.hidden)));
  for (std::size_t i = 0; i < s; ++i)
    for (int j = 0; j < cfg.hidden; ++j) x[i][j] = tok[ids[i]][j] + pos[i][j];
  ref_layer_norm(x, vec("embed.ln.g"), vec("embed.ln.b"));

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = layer_prefix(l);
    const auto q = ref_linear(x, param_mat(ck, p + "attn.q.w"), vec(p + "attn.q.b"));
    const auto k = ref_linear(x, param_mat(ck, p + "attn.k.w"), vec(p + "attn.k.b"));
    const auto v = ref_linear(x, param_mat(ck, p + "attn.v.w"), vec(p + "attn.v.b"));
    const int dh = cfg.head_dim;
    Mat ctx(s, std::vector<double>(static_cast<std::size_t>(cfg.heads[l] * dh), 0.0));
    for (int h = 0; h < cfg.heads[l]; ++h) {
      const double gate = mask && !mask->head_gates.empty() ? mask->head_gates[l][h] : 1.0;
      for (std::size_t i = 0; i < s; ++i) {
        std::vector<double> sc(s);
        double mx = -1e300;
        for (std::size_t j = 0; j < s; ++j) {
          double d = 0.0;
          for (int e = 0; e < dh; ++e) d += q[i][h * dh + e] * k[j][h * dh + e];
          sc[j] = d / std::sqrt(static_cast<double>(dh)) + (valid[j] > 0 ? 0.0 : -1e9);
          mx = std::max(mx, sc[j]);
        }
        double z = 0.0;
        for (auto& e : sc) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < s; ++j)
          for (int e = 0; e < dh; ++e) ctx[i][h * dh + e] += gate * sc[j] / z * v[j][h * dh + e];
      }
    }
    auto a = ref_linear(ctx, param_mat(ck, p + "attn.o.w"), vec(p + "attn.o.b"));
    for (std::size_t i = 0; i < s; ++i)
      for (int j = 0; j < cfg.hidden; ++j) a[i][j] += x[i][j];
    ref_layer_norm(a, vec(p + "ln1.g"), vec(p + "ln1.b"));
    auto f = ref_linear(a, param_mat(ck, p + "ffn.w1"), vec(p + "ffn.b1"));
    for (auto& row : f)
      for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = ref_gelu(row[j]);
        if (mask && !mask->neuron_gates.empty()) row[j] *= mask->neuron_gates[l][j];
      }
    auto o = ref_linear(f, param_mat(ck, p + "ffn.w2"), vec(p + "ffn.b2"));
    for (std::size_t i = 0; i < s; ++i)
      for (int j = 0; j < cfg.hidden; ++j) o[i][j] += a[i][j];
    ref_layer_norm(o, vec(p + "ln2.g"), vec(p + "ln2.b"));
    x = std::move(o);
  }

  switch (cfg.head.type) {
    case HeadType::MLM: {
      auto t = ref_linear(x, param_mat(ck, "head.mlm.dense.w"), vec("head.mlm.dense.b"));
      for (auto& row : t)
        for (auto& e : row) e = ref_gelu(e);
      ref_layer_norm(t, vec("head.mlm.ln.g"), vec("head.mlm.ln.b"));
      return ref_linear(t, tok, vec("head.mlm.bias"));
    }
    case HeadType::TokenLabel:
      return ref_linear(x, param_mat(ck, "head.out.w"), vec("head.out.b"));
    default: {
      auto pooled = ref_linear(Mat{x[0]}, param_mat(ck, "head.pool.w"), vec("head.pool.b"));
      for (auto& e : pooled[0]) e = std::tanh(e);
      return ref_linear(pooled, param_mat(ck, "head.out.w"), vec("head.out.b"));
    }
  }
}

// Largest |a - ref| over the batch element `row` of a library output.
inline double max_abs_diff(const Tensor& out, std::int64_t row, const Mat& ref) {
  const std::size_t per = ref.size() * ref[0].size();
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (std::size_t j = 0; j < ref[i].size(); ++j)
      worst = std::max(worst, std::abs(double(out.data()[row * per + i * ref[i].size() + j]) - ref[i][j]));
  return worst;
}

}  // namespace gcmp::testing
