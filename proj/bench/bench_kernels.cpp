// Serial reference vs OpenMP kernels, plus one training step of a full model.
//
//   stnas_bench --benchmark_filter=gemm

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "stnas/arch.hpp"
#include "stnas/kernels.hpp"

using namespace stnas;
namespace k = stnas::kernels;

namespace {

std::vector<Real> random_values(std::size_t n, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> out(n);
  for (Real& v : out) v = static_cast<Real>(u(rng));
  return out;
}

template <bool Parallel>
void gemm_nn(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0)), n = 32, kk = 32;
  const auto a = random_values(m * kk, 1), b = random_values(kk * n, 2);
  std::vector<Real> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::omp::gemm_nn(m, n, kk, a, b, c, false);
    else
      k::serial::gemm_nn(m, n, kk, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * kk));
}

// Four node-by-node matrices applied to a batch of 16 x 12 steps.
template <bool Parallel>
void graph_mix(benchmark::State& state) {
  const auto nodes = static_cast<std::size_t>(state.range(0));
  const std::size_t groups = 16 * 12, width = 16, count = 4;
  const auto mats = random_values(count * nodes * nodes, 3), z = random_values(groups * nodes * width * count, 4);
  std::vector<Real> y(groups * nodes * width);
  for (auto _ : state) {
    std::fill(y.begin(), y.end(), Real(0));
    if constexpr (Parallel)
      k::omp::graph_mix(groups, nodes, width, count, mats, z, y);
    else
      k::serial::graph_mix(groups, nodes, width, count, mats, z, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void attention_forward(benchmark::State& state) {
  const k::AttentionDims d{16, 12, static_cast<std::size_t>(state.range(0)), 16, 2};
  const std::size_t n = d.batch * d.steps * d.nodes * d.dim;
  const auto q = random_values(n, 5, 0.1, 2), kk = random_values(n, 6, 0.1, 2), v = random_values(n, 7);
  std::vector<Real> out(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::omp::linear_attention_forward(d, q, kk, v, out);
    else
      k::serial::linear_attention_forward(d, q, kk, v, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void attention_backward(benchmark::State& state) {
  const k::AttentionDims d{16, 12, static_cast<std::size_t>(state.range(0)), 16, 2};
  const std::size_t n = d.batch * d.steps * d.nodes * d.dim;
  const auto q = random_values(n, 5, 0.1, 2), kk = random_values(n, 6, 0.1, 2), v = random_values(n, 7),
             dout = random_values(n, 8);
  std::vector<Real> dq(n), dk(n), dv(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::omp::linear_attention_backward(d, q, kk, v, dout, dq, dk, dv);
    else
      k::serial::linear_attention_backward(d, q, kk, v, dout, dq, dk, dv);
    benchmark::DoNotOptimize(dq.data());
  }
}

// Forward and backward of the default-sized model on one batch of 16 windows.
template <bool Parallel>
void model_step(benchmark::State& state) {
  ModelConfig cfg;
  cfg.nodes = static_cast<std::size_t>(state.range(0));
  cfg.dropout = 0.0;
  ModelInstance m = init_model(arch_from_short_string("STP,TTS,STT,STP,TTS,STT"), cfg, 1);
  Tensor a({cfg.nodes, cfg.nodes});
  for (std::size_t i = 0; i < cfg.nodes; ++i) a.at(i, (i + 1) % cfg.nodes) = 1;
  const AdjacencySet adj = build_adjacency_set(a);
  Tensor x({16, cfg.history, cfg.nodes, 1});
  const auto values = random_values(x.size(), 9);
  std::copy(values.begin(), values.end(), x.data());
  k::set_parallel(Parallel);
  for (auto _ : state) {
    Tape tape;
    ParamBinder bind(tape, m.params);
    ForwardContext ctx;
    Var y = forward(m, tape.constant(x), GraphVars::bind(tape, adj), bind, ctx);
    tape.backward(mean(y));
  }
  k::set_parallel(true);
}

}  // namespace

BENCHMARK(gemm_nn<false>)->Name("gemm_nn/serial")->Arg(256)->Arg(4096);
BENCHMARK(gemm_nn<true>)->Name("gemm_nn/omp")->Arg(256)->Arg(4096);
BENCHMARK(graph_mix<false>)->Name("graph_mix/serial")->Arg(8)->Arg(32);
BENCHMARK(graph_mix<true>)->Name("graph_mix/omp")->Arg(8)->Arg(32);
BENCHMARK(attention_forward<false>)->Name("attention_forward/serial")->Arg(8)->Arg(32);
BENCHMARK(attention_forward<true>)->Name("attention_forward/omp")->Arg(8)->Arg(32);
BENCHMARK(attention_backward<false>)->Name("attention_backward/serial")->Arg(8)->Arg(32);
BENCHMARK(attention_backward<true>)->Name("attention_backward/omp")->Arg(8)->Arg(32);
BENCHMARK(model_step<false>)->Name("model_step/serial")->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(model_step<true>)->Name("model_step/omp")->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
