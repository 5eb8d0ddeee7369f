// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "ppa/ops.hpp"
#include "ppa/rng.hpp"
#include "ppa/tape.hpp"

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  ppa::Rng rng(seed);
  std::vector<float> out(n);
  for (float& v : out) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return out;
}

ppa::Tensor random_tensor(ppa::Shape shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (const auto d : shape) n *= static_cast<std::size_t>(d);
  return ppa::Tensor(std::move(shape), random_floats(n, seed));
}

void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_floats(static_cast<std::size_t>(n) * n, 1);
  const auto b = random_floats(static_cast<std::size_t>(n) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    ppa::kernels::gemm(a.data(), b.data(), c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] =
      benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

void BM_GemmBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_floats(static_cast<std::size_t>(n) * n, 3);
  const auto g = random_floats(static_cast<std::size_t>(n) * n, 4);
  std::vector<float> da(static_cast<std::size_t>(n) * n), db(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    ppa::kernels::gemm_nt_acc(g.data(), a.data(), da.data(), n, n, n);
    ppa::kernels::gemm_tn_acc(a.data(), g.data(), db.data(), n, n, n);
    benchmark::DoNotOptimize(da.data());
    benchmark::DoNotOptimize(db.data());
  }
}
BENCHMARK(BM_GemmBackward)->Arg(64)->Arg(256);

// Packed self-attention over `batch` sequences of 32 tokens, d = 64, 4 heads.
void BM_AttentionForwardBackward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int len = 32, d = 64;
  std::vector<int> offsets(batch + 1);
  for (int i = 0; i <= batch; ++i) offsets[i] = i * len;
  const ppa::Tensor q = random_tensor({batch * len, d}, 5);
  const ppa::Tensor k = random_tensor({batch * len, d}, 6);
  const ppa::Tensor v = random_tensor({batch * len, d}, 7);
  for (auto _ : state) {
    ppa::Tape tape;
    const ppa::Var out = ppa::multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), offsets, 4);
    tape.backward(ppa::mean(out));
    benchmark::DoNotOptimize(out.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch * len);
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(8)->Arg(64);

void BM_LayerNormGelu(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  const ppa::Tensor x = random_tensor({rows, 256}, 8);
  const ppa::Tensor gain = ppa::Tensor::filled({256}, 1.0f);
  const ppa::Tensor bias = ppa::Tensor::zeros({256});
  for (auto _ : state) {
    ppa::Tape tape;
    const ppa::Var y =
        ppa::gelu(ppa::layer_norm(tape.constant(x), tape.constant(gain), tape.constant(bias)));
    tape.backward(ppa::mean(y));
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_LayerNormGelu)->Arg(512)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
