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

// Serial reference kernels against their OpenMP versions, plus whole-graph
// inference before and after optimisation and quantization.
//
//   gcmp_bench --benchmark_filter=gemm
//
// Parallel variants take the thread count as the last argument.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <cstdint>
#include <random>
#include <vector>

#include "gcmp/graph.hpp"
#include "gcmp/kernels.hpp"
#include "gcmp/model.hpp"

namespace k = gcmp::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<std::int8_t> random_int8(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> d(-127, 127);
  std::vector<std::int8_t> v(n);
  for (auto& x : v) x = static_cast<std::int8_t>(d(rng));
  return v;
}

int max_threads() { return omp_get_num_procs(); }

void thread_args(benchmark::internal::Benchmark* b, std::vector<std::int64_t> sizes) {
  for (auto s : sizes)
    for (int t = 1; t <= max_threads(); t *= 2) b->Args({s, t});
}

class ThreadScope {
 public:
  explicit ThreadScope(int n) : saved_(k::num_threads()) { k::set_num_threads(n); }
  ~ThreadScope() { k::set_num_threads(saved_); }

 private:
  int saved_;
};

// Square-ish products shaped like a (tokens x hidden) @ (hidden x 4 hidden) layer.
void BM_gemm_reference(benchmark::State& state) {
  const auto n = state.range(0);
  auto a = random_floats(static_cast<std::size_t>(n * n), 1);
  auto b = random_floats(static_cast<std::size_t>(n * n), 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    k::reference::gemm(a.data(), b.data(), c.data(), n, n, n, false, false, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_gemm_reference)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_gemm_parallel(benchmark::State& state) {
  const auto n = state.range(0);
  ThreadScope threads(static_cast<int>(state.range(1)));
  auto a = random_floats(static_cast<std::size_t>(n * n), 1);
  auto b = random_floats(static_cast<std::size_t>(n * n), 2);
  std::vector<float> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    k::gemm(a.data(), b.data(), c.data(), n, n, n, false, false, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}
BENCHMARK(BM_gemm_parallel)->Apply([](auto* b) { thread_args(b, {64, 256, 512}); })->Unit(benchmark::kMicrosecond);

void BM_qgemm_reference(benchmark::State& state) {
  const auto n = state.range(0);
  auto a = random_int8(static_cast<std::size_t>(n * n), 3);
  auto w = random_int8(static_cast<std::size_t>(n * n), 4);
  std::vector<std::int32_t> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    k::reference::qgemm_nt(a.data(), w.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_qgemm_reference)->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_qgemm_parallel(benchmark::State& state) {
  const auto n = state.range(0);
  ThreadScope threads(static_cast<int>(state.range(1)));
  auto a = random_int8(static_cast<std::size_t>(n * n), 3);
  auto w = random_int8(static_cast<std::size_t>(n * n), 4);
  std::vector<std::int32_t> c(static_cast<std::size_t>(n * n));
  for (auto _ : state) {
    k::qgemm_nt(a.data(), w.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_qgemm_parallel)->Apply([](auto* b) { thread_args(b, {64, 256, 512}); })->Unit(benchmark::kMicrosecond);

constexpr std::int64_t kCols = 512;

void BM_layer_norm_reference(benchmark::State& state) {
  const auto rows = state.range(0);
  auto x = random_floats(static_cast<std::size_t>(rows * kCols), 5);
  std::vector<float> g(kCols, 1.0f), b(kCols, 0.0f), y(x.size());
  for (auto _ : state) {
    k::reference::layer_norm(x.data(), g.data(), b.data(), y.data(), nullptr, nullptr, rows, kCols, 1e-5f);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_layer_norm_reference)->Arg(256)->Arg(2048)->Unit(benchmark::kMicrosecond);

void BM_layer_norm_parallel(benchmark::State& state) {
  const auto rows = state.range(0);
  ThreadScope threads(static_cast<int>(state.range(1)));
  auto x = random_floats(static_cast<std::size_t>(rows * kCols), 5);
  std::vector<float> g(kCols, 1.0f), b(kCols, 0.0f), y(x.size());
  for (auto _ : state) {
    k::layer_norm(x.data(), g.data(), b.data(), y.data(), nullptr, nullptr, rows, kCols, 1e-5f);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_layer_norm_parallel)->Apply([](auto* b) { thread_args(b, {256, 2048}); })->Unit(benchmark::kMicrosecond);

void BM_softmax_reference(benchmark::State& state) {
  const auto rows = state.range(0);
  auto x = random_floats(static_cast<std::size_t>(rows * kCols), 6);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    k::reference::softmax_rows(x.data(), y.data(), rows, kCols);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_softmax_reference)->Arg(256)->Arg(2048)->Unit(benchmark::kMicrosecond);

void BM_softmax_parallel(benchmark::State& state) {
  const auto rows = state.range(0);
  ThreadScope threads(static_cast<int>(state.range(1)));
  auto x = random_floats(static_cast<std::size_t>(rows * kCols), 6);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    k::softmax_rows(x.data(), y.data(), rows, kCols);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_softmax_parallel)->Apply([](auto* b) { thread_args(b, {256, 2048}); })->Unit(benchmark::kMicrosecond);

void BM_gelu_reference(benchmark::State& state) {
  auto x = random_floats(static_cast<std::size_t>(state.range(0)), 7);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    k::reference::gelu(x.data(), y.data(), state.range(0));
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_gelu_reference)->Arg(1 << 16)->Arg(1 << 20)->Unit(benchmark::kMicrosecond);

void BM_gelu_parallel(benchmark::State& state) {
  ThreadScope threads(static_cast<int>(state.range(1)));
  auto x = random_floats(static_cast<std::size_t>(state.range(0)), 7);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    k::gelu(x.data(), y.data(), state.range(0));
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_gelu_parallel)->Apply([](auto* b) { thread_args(b, {1 << 16, 1 << 20}); })->Unit(benchmark::kMicrosecond);

// Whole-model inference, batch 32 x 64 tokens, single thread.
// Arg: 0 = exported graph, 1 = optimised, 2 = optimised + int8.
void BM_graph(benchmark::State& state) {
  ThreadScope threads(1);
  const auto cfg = gcmp::ModelConfig::uniform(3, 128, 4, 2000, 64, gcmp::HeadKind::single_label(5));
  const auto ck = gcmp::init_model(cfg, 1);
  auto g = gcmp::export_graph(ck);
  if (state.range(0) >= 1) g = gcmp::optimize_graph(g).graph;
  if (state.range(0) == 2) g = gcmp::quantize_dynamic(g);
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> id(5, cfg.vocab_size - 1);
  std::vector<std::vector<gcmp::TokenId>> seqs(32, std::vector<gcmp::TokenId>(64));
  for (auto& s : seqs)
    for (auto& t : s) t = id(rng);
  const auto batch = gcmp::Batch::from_sequences(seqs);
  for (auto _ : state) benchmark::DoNotOptimize(gcmp::run_graph(g, batch));
  state.counters["nodes"] = static_cast<double>(g.node_count());
}
BENCHMARK(BM_graph)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
