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

#include "gcmp/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

namespace gcmp::kernels {

namespace {

int threads_from_env() {
  if (const char* env = std::getenv("GCMP_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::atomic<int> g_threads{threads_from_env()};

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::int64_t kParallelWork = 1 << 15;

inline bool go_parallel(std::int64_t work) { return g_threads.load() > 1 && work >= kParallelWork; }

constexpr float kInvSqrt2 = 0.70710678118654752440f;

}  // namespace

int num_threads() { return g_threads.load(); }
void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool trans_a, bool trans_b, bool accumulate) {
  // Work on B as (K,N) row-major so the inner loop runs contiguously over N.
  std::vector<float> bt;
  const float* bk = b;
  if (trans_b) {
    bt.resize(static_cast<std::size_t>(k * n));
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t kk = 0; kk < k; ++kk) bt[kk * n + j] = b[j * k + kk];
    bk = bt.data();
  }
  auto a_at = [&](std::int64_t i, std::int64_t kk) {
    return trans_a ? a[kk * m + i] : a[i * k + kk];
  };
  const std::int64_t blocks = (m + 3) / 4;
  const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel(m * n * k))
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::int64_t i0 = blk * 4;
    const std::int64_t rows = std::min<std::int64_t>(4, m - i0);
    if (!accumulate) std::fill(c + i0 * n, c + (i0 + rows) * n, 0.0f);
    if (rows == 4) {
      float* c0 = c + i0 * n;
      float* c1 = c0 + n;
      float* c2 = c1 + n;
      float* c3 = c2 + n;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const float a0 = a_at(i0, kk), a1 = a_at(i0 + 1, kk);
        const float a2 = a_at(i0 + 2, kk), a3 = a_at(i0 + 3, kk);
        const float* br = bk + kk * n;
        for (std::int64_t j = 0; j < n; ++j) {
          const float bv = br[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    } else {
      for (std::int64_t r = 0; r < rows; ++r) {
        float* cr = c + (i0 + r) * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
          const float av = a_at(i0 + r, kk);
          const float* br = bk + kk * n;
          for (std::int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
      }
    }
  }
}

void layer_norm(const float* x, const float* gamma, const float* beta, float* y,
                float* mean, float* rstd, std::int64_t rows, std::int64_t cols, float eps) {
  const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel(rows * cols * 8))
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    float* yr = y + r * cols;
    float s = 0.0f;
    for (std::int64_t j = 0; j < cols; ++j) s += xr[j];
    const float mu = s / static_cast<float>(cols);
    float v = 0.0f;
    for (std::int64_t j = 0; j < cols; ++j) {
      const float d = xr[j] - mu;
      v += d * d;
    }
    const float rs = 1.0f / std::sqrt(v / static_cast<float>(cols) + eps);
    for (std::int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    if (mean) mean[r] = mu;
    if (rstd) rstd[r] = rs;
  }
}

void softmax_rows(const float* x, float* y, std::int64_t rows, std::int64_t cols) {
  const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel(rows * cols * 8))
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    float* yr = y + r * cols;
    float mx = xr[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    float s = 0.0f;
    for (std::int64_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const float inv = 1.0f / s;
    for (std::int64_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void gelu(const float* x, float* y, std::int64_t n) {
  const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel(n * 16))
  for (std::int64_t i = 0; i < n; ++i) y[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * kInvSqrt2));
}

void qgemm_nt(const std::int8_t* a, const std::int8_t* w, std::int32_t* c, std::int64_t m,
              std::int64_t n, std::int64_t k) {
  const int nt = num_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel(m * n * k))
  for (std::int64_t i = 0; i < m; ++i) {
    const std::int8_t* ar = a + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const std::int8_t* wr = w + j * k;
      std::int32_t acc = 0;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        acc += static_cast<std::int32_t>(ar[kk]) * static_cast<std::int32_t>(wr[kk]);
      }
      c[i * n + j] = acc;
    }
  }
}

namespace reference {

void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool trans_a, bool trans_b, bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      float s = accumulate ? c[i * n + j] : 0.0f;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const float av = trans_a ? a[kk * m + i] : a[i * k + kk];
        const float bv = trans_b ? b[j * k + kk] : b[kk * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
}

void layer_norm(const float* x, const float* gamma, const float* beta, float* y,
                float* mean, float* rstd, std::int64_t rows, std::int64_t cols, float eps) {
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) s += x[r * cols + j];
    const double mu = s / static_cast<double>(cols);
    double v = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) v += (x[r * cols + j] - mu) * (x[r * cols + j] - mu);
    const double rs = 1.0 / std::sqrt(v / static_cast<double>(cols) + eps);
    for (std::int64_t j = 0; j < cols; ++j) {
      y[r * cols + j] = static_cast<float>((x[r * cols + j] - mu) * rs * gamma[j] + beta[j]);
    }
    if (mean) mean[r] = static_cast<float>(mu);
    if (rstd) rstd[r] = static_cast<float>(rs);
  }
}

void softmax_rows(const float* x, float* y, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max<double>(mx, x[r * cols + j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) s += std::exp(x[r * cols + j] - mx);
    for (std::int64_t j = 0; j < cols; ++j) {
      y[r * cols + j] = static_cast<float>(std::exp(x[r * cols + j] - mx) / s);
    }
  }
}

void gelu(const float* x, float* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = x[i];
    y[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
  }
}

void qgemm_nt(const std::int8_t* a, const std::int8_t* w, std::int32_t* c, std::int64_t m,
              std::int64_t n, std::int64_t k) {
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      std::int64_t acc = 0;
      for (std::int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * w[j * k + kk];
      c[i * n + j] = static_cast<std::int32_t>(acc);
    }
}

}  // namespace reference
}  // namespace gcmp::kernels
