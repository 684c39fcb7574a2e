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

// Dense compute kernels. The functions in gcmp::kernels are OpenMP-parallel
// over output rows; each output element is reduced in a fixed order, so the
// result is bit-identical for any thread count. gcmp::kernels::reference holds
// the plain serial loops the parallel versions are tested against.
namespace gcmp::kernels {

// Thread cap for parallel kernels. Initialised from GCMP_THREADS (default 1).
int num_threads();
void set_num_threads(int n);

// C(M,N) = op(A) * op(B) [+ C]. op(A) is (M,K), op(B) is (K,N).
// trans_a: A stored (K,M). trans_b: B stored (N,K).
void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool trans_a, bool trans_b, bool accumulate);

// Row-wise layer norm over `cols`. mean/rstd may be null.
void layer_norm(const float* x, const float* gamma, const float* beta, float* y,
                float* mean, float* rstd, std::int64_t rows, std::int64_t cols, float eps);

void softmax_rows(const float* x, float* y, std::int64_t rows, std::int64_t cols);

// Exact (erf) GELU.
void gelu(const float* x, float* y, std::int64_t n);

// C(M,N) = A(M,K) * W(N,K)^T with int8 operands and 32-bit accumulation.
void qgemm_nt(const std::int8_t* a, const std::int8_t* w, std::int32_t* c, std::int64_t m,
              std::int64_t n, std::int64_t k);

namespace reference {

void gemm(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool trans_a, bool trans_b, bool accumulate);
void layer_norm(const float* x, const float* gamma, const float* beta, float* y,
                float* mean, float* rstd, std::int64_t rows, std::int64_t cols, float eps);
void softmax_rows(const float* x, float* y, std::int64_t rows, std::int64_t cols);
void gelu(const float* x, float* y, std::int64_t n);
void qgemm_nt(const std::int8_t* a, const std::int8_t* w, std::int32_t* c, std::int64_t m,
              std::int64_t n, std::int64_t k);

}  // namespace reference
}  // namespace gcmp::kernels
