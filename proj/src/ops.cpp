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

#include "gcmp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gcmp/error.hpp"
#include "gcmp/kernels.hpp"

namespace gcmp::ops {

namespace {

constexpr float kInvSqrt2 = 0.70710678118654752440f;
constexpr float kInvSqrt2Pi = 0.39894228040143267794f;

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite result in ") + op);
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void record(Tensor& out, Tape::BackwardFn fn) {
  out.set_requires_grad(true);
  active_tape()->record(out, std::move(fn));
}

std::int64_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("operator needs at least one axis");
  return t.dim(-1);
}

// b's shape must equal the trailing axes of a's shape.
std::int64_t suffix_repeats(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                     shape_str(as));
  }
  return b.numel() == 0 ? 0 : a.numel() / b.numel();
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
    throw ShapeError("matmul expects 2-D or batched 3-D operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::int64_t batch = batched ? a.dim(0) : 1;
  const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k || (batched && b.dim(0) != batch)) {
    throw ShapeError("matmul shape mismatch " + shape_str(a.shape()) + " @ " +
                     shape_str(b.shape()));
  }
  Shape os = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor out = Tensor::zeros(os);
  for (std::int64_t p = 0; p < batch; ++p) {
    kernels::gemm(a.data().data() + p * m * k, b.data().data() + p * k * n,
                  out.data().data() + p * m * n, m, n, k, false, false, false);
  }
  check_finite(out, "matmul");
  if (wants_grad({&a, &b})) {
    record(out, [a, b, out, batch, m, n, k]() mutable {
      auto g = out.grad();
      for (std::int64_t p = 0; p < batch; ++p) {
        if (a.requires_grad()) {
          kernels::gemm(g.data() + p * m * n, b.data().data() + p * k * n,
                        a.grad().data() + p * m * k, m, k, n, false, true, true);
        }
        if (b.requires_grad()) {
          kernels::gemm(a.data().data() + p * m * k, g.data() + p * m * n,
                        b.grad().data() + p * k * n, k, n, m, true, false, true);
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  const std::int64_t r = a.dim(-2), c = a.dim(-1);
  const std::int64_t batch = a.numel() / std::max<std::int64_t>(1, r * c);
  Shape os = a.shape();
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor out = Tensor::zeros(os);
  auto src = a.data();
  auto dst = out.data();
  for (std::int64_t p = 0; p < batch; ++p)
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) dst[p * r * c + j * r + i] = src[p * r * c + i * c + j];
  if (wants_grad({&a})) {
    record(out, [a, out, batch, r, c]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::int64_t p = 0; p < batch; ++p)
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) ga[p * r * c + i * c + j] += g[p * r * c + j * r + i];
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear weight must be 2-D");
  const std::int64_t in = w.dim(1), out_dim = w.dim(0);
  if (last_dim(x) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  }
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(1, in);
  Shape os = x.shape();
  os.back() = out_dim;
  Tensor out = Tensor::zeros(os);
  auto y = out.data();
  if (b.defined()) {
    auto bv = b.data();
    for (std::int64_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), y.begin() + r * out_dim);
  }
  kernels::gemm(x.data().data(), w.data().data(), y.data(), rows, out_dim, in, false, true,
                b.defined());
  check_finite(out, "linear");
  if (wants_grad({&x, &w, &b})) {
    record(out, [x, w, b, out, rows, in, out_dim]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        kernels::gemm(g.data(), w.data().data(), x.grad().data(), rows, in, out_dim, false, false,
                      true);
      }
      if (w.requires_grad()) {
        kernels::gemm(g.data(), x.data().data(), w.grad().data(), out_dim, in, rows, true, false,
                      true);
      }
      if (b.defined() && b.requires_grad()) {
        auto gb = b.grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::int64_t reps = suffix_repeats(a, b, "add");
  const std::int64_t bn = b.numel();
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < bn; ++j) y[r * bn + j] = av[r * bn + j] + bv[j];
  check_finite(out, "add");
  if (wants_grad({&a, &b})) {
    record(out, [a, b, out, reps, bn]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::int64_t r = 0; r < reps; ++r)
          for (std::int64_t j = 0; j < bn; ++j) gb[j] += g[r * bn + j];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::int64_t reps = suffix_repeats(a, b, "mul");
  const std::int64_t bn = b.numel();
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::int64_t r = 0; r < reps; ++r)
    for (std::int64_t j = 0; j < bn; ++j) y[r * bn + j] = av[r * bn + j] * bv[j];
  check_finite(out, "mul");
  if (wants_grad({&a, &b})) {
    record(out, [a, b, out, reps, bn]() mutable {
      auto g = out.grad();
      auto av = a.data();
      auto bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::int64_t r = 0; r < reps; ++r)
          for (std::int64_t j = 0; j < bn; ++j) ga[r * bn + j] += g[r * bn + j] * bv[j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::int64_t r = 0; r < reps; ++r)
          for (std::int64_t j = 0; j < bn; ++j) gb[j] += g[r * bn + j] * av[r * bn + j];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.data();
  auto av = a.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * s;
  check_finite(out, "scale");
  if (wants_grad({&a})) {
    record(out, [a, out, s]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, const Shape& prefix) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D");
  if (numel_of(prefix) != static_cast<std::int64_t>(ids.size())) {
    throw ShapeError("embedding: id count does not match prefix " + shape_str(prefix));
  }
  const std::int64_t rows = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || id >= rows) {
      throw ValidationError("embedding id " + std::to_string(id) + " outside table of " +
                            std::to_string(rows) + " rows");
    }
  }
  Shape os = prefix;
  os.push_back(d);
  Tensor out = Tensor::zeros(os);
  auto y = out.data();
  auto tv = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(tv.begin() + ids[r] * d, d, y.begin() + static_cast<std::int64_t>(r) * d);
  }
  if (wants_grad({&table})) {
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    record(out, [table, out, kept = std::move(kept), d]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t r = 0; r < kept.size(); ++r)
        for (std::int64_t j = 0; j < d; ++j) gt[kept[r] * d + j] += g[r * d + j];
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::int64_t cols = last_dim(x);
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw ShapeError("layer_norm: affine params do not match " + shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(1, cols);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> mean(rows), rstd(rows);
  kernels::layer_norm(x.data().data(), gamma.data().data(), beta.data().data(),
                      out.data().data(), mean.data(), rstd.data(), rows, cols, eps);
  check_finite(out, "layer_norm");
  if (wants_grad({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, out, mean = std::move(mean), rstd = std::move(rstd), rows,
                 cols]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto gv = gamma.data();
      std::vector<float> xhat(cols), dxhat(cols);
      for (std::int64_t r = 0; r < rows; ++r) {
        float sum_d = 0.0f, sum_dx = 0.0f;
        for (std::int64_t j = 0; j < cols; ++j) {
          xhat[j] = (xv[r * cols + j] - mean[r]) * rstd[r];
          dxhat[j] = g[r * cols + j] * gv[j];
          sum_d += dxhat[j];
          sum_dx += dxhat[j] * xhat[j];
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad();
          for (std::int64_t j = 0; j < cols; ++j) gg[j] += g[r * cols + j] * xhat[j];
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad();
          for (std::int64_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
        }
        if (x.requires_grad()) {
          auto gx = x.grad();
          const float inv_n = 1.0f / static_cast<float>(cols);
          for (std::int64_t j = 0; j < cols; ++j) {
            gx[r * cols + j] +=
                rstd[r] * (dxhat[j] - sum_d * inv_n - xhat[j] * sum_dx * inv_n);
          }
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  kernels::gelu(x.data().data(), out.data().data(), x.numel());
  check_finite(out, "gelu");
  if (wants_grad({&x})) {
    record(out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float v = xv[i];
        const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
        const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto y = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
  if (wants_grad({&x})) {
    record(out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto y = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0f - y[i] * y[i]);
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto y = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0f / (1.0f + std::exp(-xv[i]));
  if (wants_grad({&x})) {
    record(out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto y = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0f - y[i]);
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const std::int64_t cols = last_dim(x);
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(1, cols);
  Tensor out = Tensor::zeros(x.shape());
  if (cols > 0) kernels::softmax_rows(x.data().data(), out.data().data(), rows, cols);
  check_finite(out, "softmax");
  if (wants_grad({&x})) {
    record(out, [x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto y = out.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        float dot = 0.0f;
        for (std::int64_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
        for (std::int64_t j = 0; j < cols; ++j) {
          gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const std::int64_t cols = last_dim(x);
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(1, cols);
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto y = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    float mx = xv[r * cols];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xv[r * cols + j]);
    float s = 0.0f;
    for (std::int64_t j = 0; j < cols; ++j) s += std::exp(xv[r * cols + j] - mx);
    const float lse = mx + std::log(s);
    for (std::int64_t j = 0; j < cols; ++j) y[r * cols + j] = xv[r * cols + j] - lse;
  }
  check_finite(out, "log_softmax");
  if (wants_grad({&x})) {
    record(out, [x, out, rows, cols]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto y = out.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        float gs = 0.0f;
        for (std::int64_t j = 0; j < cols; ++j) gs += g[r * cols + j];
        for (std::int64_t j = 0; j < cols; ++j) {
          gx[r * cols + j] += g[r * cols + j] - std::exp(y[r * cols + j]) * gs;
        }
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool train) {
  if (p < 0.0f || p >= 1.0f) throw ValidationError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0f;
  Tensor out = Tensor::zeros(x.shape());
  auto y = out.data();
  auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];
  if (wants_grad({&x})) {
    record(out, [x, out, mask = std::move(mask)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.storage());
  if (wants_grad({&x})) {
    record(out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

namespace {

struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("axis out of range");
  return axis;
}

}  // namespace

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > s.extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") outside axis of size " + std::to_string(s.extent));
  }
  Shape os = x.shape();
  os[static_cast<std::size_t>(axis)] = length;
  Tensor out = Tensor::zeros(os);
  auto y = out.data();
  auto xv = x.data();
  const std::int64_t chunk = length * s.inner;
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + (o * s.extent + start) * s.inner, chunk, y.begin() + o * chunk);
  }
  if (wants_grad({&x})) {
    record(out, [x, out, s, start, chunk]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t i = 0; i < chunk; ++i) gx[(o * s.extent + start) * s.inner + i] += g[o * chunk + i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  axis = normalize_axis(axis, xs.front().rank());
  Shape os = xs.front().shape();
  std::int64_t total = 0;
  for (const auto& t : xs) {
    Shape probe = t.shape();
    if (probe.size() != os.size()) throw ShapeError("concat rank mismatch");
    probe[static_cast<std::size_t>(axis)] = os[static_cast<std::size_t>(axis)];
    if (probe != os) throw ShapeError("concat shape mismatch " + shape_str(t.shape()));
    total += t.dim(axis);
  }
  os[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(os);
  const AxisSplit s = split_at(os, axis);
  auto y = out.data();
  std::int64_t offset = 0;
  for (const auto& t : xs) {
    const std::int64_t chunk = t.dim(axis) * s.inner;
    auto tv = t.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(tv.begin() + o * chunk, chunk, y.begin() + (o * s.extent + offset) * s.inner);
    }
    offset += t.dim(axis);
  }
  bool any = false;
  for (const auto& t : xs) any = any || t.requires_grad();
  if (active_tape() && any) {
    record(out, [xs, out, s, axis]() mutable {
      auto g = out.grad();
      std::int64_t offset = 0;
      for (auto& t : xs) {
        const std::int64_t chunk = t.dim(axis) * s.inner;
        if (t.requires_grad()) {
          auto gt = t.grad();
          for (std::int64_t o = 0; o < s.outer; ++o)
            for (std::int64_t i = 0; i < chunk; ++i) gt[o * chunk + i] += g[(o * s.extent + offset) * s.inner + i];
        }
        offset += t.dim(axis);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  float s = 0.0f;
  for (float v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (wants_grad({&x})) {
    record(out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects (N, C) logits");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n) {
    throw ShapeError("cross_entropy: target count does not match logits rows");
  }
  std::int64_t count = 0;
  for (auto t : targets) {
    if (t == kIgnore) continue;
    if (t < 0 || t >= c) {
      throw ValidationError("label " + std::to_string(t) + " outside label space of " +
                            std::to_string(c));
    }
    ++count;
  }
  std::vector<float> probs(static_cast<std::size_t>(n * c));
  kernels::softmax_rows(logits.data().data(), probs.data(), n, c);
  auto lv = logits.data();
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    if (targets[r] == kIgnore) continue;
    float mx = lv[r * c];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, lv[r * c + j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(lv[r * c + j] - mx));
    loss += -(static_cast<double>(lv[r * c + targets[r]] - mx) - std::log(s));
  }
  Tensor out = Tensor::scalar(count ? static_cast<float>(loss / count) : 0.0f);
  check_finite(out, "cross_entropy");
  if (count && wants_grad({&logits})) {
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    record(out, [logits, out, probs = std::move(probs), tgt = std::move(tgt), n, c,
                 count]() mutable {
      const float g = out.grad()[0] / static_cast<float>(count);
      auto gl = logits.grad();
      for (std::int64_t r = 0; r < n; ++r) {
        if (tgt[r] == kIgnore) continue;
        for (std::int64_t j = 0; j < c; ++j) {
          const float onehot = j == tgt[r] ? 1.0f : 0.0f;
          gl[r * c + j] += g * (probs[r * c + j] - onehot);
        }
      }
    });
  }
  return out;
}

Tensor binary_cross_entropy(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("binary_cross_entropy: " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  }
  if (logits.numel() == 0) throw ShapeError("binary_cross_entropy of empty tensor");
  auto z = logits.data();
  auto t = targets.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (t[i] < 0.0f || t[i] > 1.0f) throw ValidationError("BCE target outside [0, 1]");
    const double zi = z[i];
    loss += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  const auto n = static_cast<float>(z.size());
  Tensor out = Tensor::scalar(static_cast<float>(loss / n));
  check_finite(out, "binary_cross_entropy");
  if (wants_grad({&logits, &targets})) {
    record(out, [logits, targets, out, n]() mutable {
      const float g = out.grad()[0] / n;
      auto z = logits.data();
      auto t = targets.data();
      if (logits.requires_grad()) {
        auto gz = logits.grad();
        for (std::size_t i = 0; i < gz.size(); ++i) {
          gz[i] += g * (1.0f / (1.0f + std::exp(-z[i])) - t[i]);
        }
      }
      if (targets.requires_grad()) {
        auto gt = targets.grad();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * z[i];
      }
    });
  }
  return out;
}

Tensor mean_squared_error(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mean_squared_error: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (pred.numel() == 0) throw ShapeError("mean_squared_error of empty tensor");
  auto p = pred.data();
  auto t = target.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) loss += (double(p[i]) - t[i]) * (double(p[i]) - t[i]);
  const auto n = static_cast<float>(p.size());
  Tensor out = Tensor::scalar(static_cast<float>(loss / n));
  check_finite(out, "mean_squared_error");
  if (wants_grad({&pred, &target})) {
    record(out, [pred, target, out, n]() mutable {
      const float g = out.grad()[0] * 2.0f / n;
      auto p = pred.data();
      auto t = target.data();
      if (pred.requires_grad()) {
        auto gp = pred.grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (p[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto gt = target.grad();
        for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * (p[i] - t[i]);
      }
    });
  }
  return out;
}

namespace {

void validate_distribution(const Tensor& p, const char* name) {
  const std::int64_t cols = last_dim(p);
  const std::int64_t rows = p.numel() / std::max<std::int64_t>(1, cols);
  auto v = p.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      if (!(v[r * cols + j] >= 0.0f)) {
        throw ValidationError(std::string("kl_divergence: ") + name + " has a negative entry");
      }
      s += v[r * cols + j];
    }
    if (std::abs(s - 1.0) > 1e-5) {
      throw ValidationError(std::string("kl_divergence: ") + name + " row does not sum to 1");
    }
  }
}

}  // namespace

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) throw ShapeError("kl_divergence shape mismatch");
  validate_distribution(p, "p");
  validate_distribution(q, "q");
  const std::int64_t cols = last_dim(p);
  const std::int64_t rows = p.numel() / std::max<std::int64_t>(1, cols);
  auto pv = p.data();
  auto qv = q.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] > 0.0f) loss += pv[i] * (std::log(double(pv[i])) - std::log(double(qv[i])));
  }
  Tensor out = Tensor::scalar(static_cast<float>(loss / static_cast<double>(rows)));
  check_finite(out, "kl_divergence");
  if (wants_grad({&p, &q})) {
    record(out, [p, q, out, rows]() mutable {
      const float g = out.grad()[0] / static_cast<float>(rows);
      auto pv = p.data();
      auto qv = q.data();
      if (p.requires_grad()) {
        auto gp = p.grad();
        for (std::size_t i = 0; i < gp.size(); ++i) {
          if (pv[i] > 0.0f) gp[i] += g * (std::log(pv[i] / qv[i]) + 1.0f);
        }
      }
      if (q.requires_grad()) {
        auto gq = q.grad();
        for (std::size_t i = 0; i < gq.size(); ++i) gq[i] -= g * pv[i] / qv[i];
      }
    });
  }
  return out;
}

Tensor kl_divergence_with_logits(const Tensor& p, const Tensor& logits,
                                 std::span<const float> row_weights) {
  if (p.shape() != logits.shape()) throw ShapeError("kl_divergence_with_logits shape mismatch");
  const std::int64_t cols = last_dim(p);
  const std::int64_t rows = p.numel() / std::max<std::int64_t>(1, cols);
  if (!row_weights.empty() && static_cast<std::int64_t>(row_weights.size()) != rows) {
    throw ShapeError("kl_divergence_with_logits: row weight count mismatch");
  }
  auto pv = p.data();
  auto lv = logits.data();
  std::vector<float> q(static_cast<std::size_t>(p.numel()));
  double loss = 0.0, wsum = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double w = row_weights.empty() ? 1.0 : row_weights[r];
    float mx = lv[r * cols];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, lv[r * cols + j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) s += std::exp(double(lv[r * cols + j] - mx));
    const double lse = mx + std::log(s);
    double row = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      const double logq = lv[r * cols + j] - lse;
      q[r * cols + j] = static_cast<float>(std::exp(logq));
      const double pj = pv[r * cols + j];
      if (pj > 0.0) row += pj * (std::log(pj) - logq);
    }
    loss += w * row;
    wsum += w;
  }
  const float norm = wsum > 0.0 ? static_cast<float>(wsum) : 1.0f;
  Tensor out = Tensor::scalar(static_cast<float>(loss / norm));
  check_finite(out, "kl_divergence_with_logits");
  if (wants_grad({&logits})) {
    std::vector<float> w(row_weights.begin(), row_weights.end());
    record(out, [p, logits, out, q = std::move(q), w = std::move(w), rows, cols,
                 norm]() mutable {
      const float g = out.grad()[0] / norm;
      auto pv = p.data();
      auto gl = logits.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const float wr = w.empty() ? 1.0f : w[r];
        if (wr == 0.0f) continue;
        for (std::int64_t j = 0; j < cols; ++j) {
          gl[r * cols + j] += g * wr * (q[r * cols + j] - pv[r * cols + j]);
        }
      }
    });
  }
  return out;
}

}  // namespace gcmp::ops
