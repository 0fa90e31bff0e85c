#include <benchmark/benchmark.h>

#include "hylite/losses.hpp"
#include "hylite/model.hpp"
#include "hylite/rng.hpp"
#include "hylite/tensor.hpp"

using namespace hylite;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() * 2 - 1;
  return v;
}

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Graph g;
  Tensor a = g.leaf({n, n}, random_vec(n * n, 1), false);
  Tensor b = g.leaf({n, n}, random_vec(n * n, 2), false);
  const std::size_t mark = g.size();
  for (auto _ : state) {
    g.truncate(mark);
    benchmark::DoNotOptimize(matmul(a, b).value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_SoftmaxRows(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Graph g;
  Tensor x = g.leaf({n, n}, random_vec(n * n, 3), false);
  const std::size_t mark = g.size();
  for (auto _ : state) {
    g.truncate(mark);
    benchmark::DoNotOptimize(softmax_rows(x).value().data());
  }
}
BENCHMARK(BM_SoftmaxRows)->Arg(64)->Arg(256);

void BM_BlockForward(benchmark::State& state) {
  ModelConfig c;
  c.m = static_cast<std::size_t>(state.range(0));
  c.p = 7;
  c.d = 64;
  c.blocks = 1;
  c.heads = 4;
  c.classes = 4;
  Model m = Model::init(c, 5);
  Tensor x = m.graph->leaf({c.m + 1, c.d}, random_vec((c.m + 1) * c.d, 4), false);
  const std::size_t mark = m.graph->size();
  for (auto _ : state) {
    m.graph->truncate(mark);
    benchmark::DoNotOptimize(block_forward(x, m.params.blocks[0], m.config).value().data());
  }
}
BENCHMARK(BM_BlockForward)->Arg(24)->Arg(200);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig c;
  c.m = 24;
  c.p = 7;
  c.d = 64;
  c.blocks = 5;
  c.heads = 4;
  c.classes = 4;
  Model m = Model::init(c, 6);
  Graph& g = *m.graph;
  const auto inst = random_vec(c.m * c.p * c.p, 7);
  const int target = 1;
  for (auto _ : state) {
    g.truncate(m.base_size);
    g.zero_grad();
    Tensor leaf = g.leaf({c.m, c.p * c.p}, inst, false);
    auto io = forward_instance(leaf, m.params, m.config);
    std::vector<Tensor> xf = {io.x_final};
    Tensor obj = objective(io.logits, std::span<const int>(&target, 1), xf, 1.0);
    g.backward(obj);
    benchmark::DoNotOptimize(m.params.W.grad().data());
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
