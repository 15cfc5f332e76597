// Microbenchmarks for the hot paths: the two convolution flavors, pooling,
// and structure construction. Run with --benchmark_filter to narrow.

#include <benchmark/benchmark.h>

#include "sunet/layers.hpp"
#include "sunet/models.hpp"
#include "sunet/neighborhood.hpp"
#include "sunet/parallel.hpp"
#include "sunet/rng.hpp"

using namespace sunet;

namespace {

struct ConvSetup {
  IcoSphere mesh;
  NeighborTable table;
  Value<float> x, w, b;

  ConvSetup(int level, int64_t in_ch, int64_t out_ch) {
    mesh = generate(level);
    table = build_dine_table(mesh);
    Rng rng(7);
    x = Value<float>::leaf(Tensor<float>::normal({mesh.num_vertices(), in_ch}, rng));
    w = Value<float>::leaf(xavier_uniform<float>(7 * in_ch, out_ch, rng));
    b = Value<float>::leaf(Tensor<float>::zeros({1, out_ch}));
  }
};

struct RePaSetup {
  IcoSphere mesh;
  RePaSampler sampler;
  Tensor<float> interp;
  Value<float> x, w, b;

  RePaSetup(int level, int64_t in_ch, int64_t out_ch) {
    mesh = generate(level);
    sampler = build_repa_sampler(mesh, 3, 3, mean_edge_arc(mesh));
    interp = Tensor<float>({sampler.weights.rows(), sampler.weights.cols()});
    for (int64_t i = 0; i < interp.numel(); ++i)
      interp.data()[i] = float(sampler.weights.data()[i]);
    Rng rng(7);
    x = Value<float>::leaf(Tensor<float>::normal({mesh.num_vertices(), in_ch}, rng));
    w = Value<float>::leaf(xavier_uniform<float>(9 * in_ch, out_ch, rng));
    b = Value<float>::leaf(Tensor<float>::zeros({1, out_ch}));
  }
};

void BM_DineConvForward(benchmark::State& state) {
  const int level = int(state.range(0));
  const int64_t ch = state.range(1);
  ConvSetup s(level, ch, ch);
  for (auto _ : state) {
    Value<float> out = dine_conv_rows(s.x, s.w, s.b, s.table.slots);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * s.mesh.num_vertices());
}

void BM_RePaConvForward(benchmark::State& state) {
  const int level = int(state.range(0));
  const int64_t ch = state.range(1);
  RePaSetup s(level, ch, ch);
  for (auto _ : state) {
    Value<float> out = repa_conv_rows(s.x, s.w, s.b, s.sampler.anchors, s.interp, 9);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * s.mesh.num_vertices());
}

void BM_DineConvBackward(benchmark::State& state) {
  const int level = int(state.range(0));
  const int64_t ch = state.range(1);
  IcoSphere mesh = generate(level);
  NeighborTable table = build_dine_table(mesh);
  Rng rng(7);
  Value<float> x = Value<float>::leaf(Tensor<float>::normal({mesh.num_vertices(), ch}, rng), true);
  Value<float> w = Value<float>::leaf(xavier_uniform<float>(7 * ch, ch, rng), true);
  Value<float> b = Value<float>::leaf(Tensor<float>::zeros({1, ch}), true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    Value<float> loss = reduce_mean(dine_conv_rows(x, w, b, table.slots));
    loss.backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * mesh.num_vertices());
}

void BM_MeanPool(benchmark::State& state) {
  const int level = int(state.range(0));
  IcoSphere fine = generate(level);
  NeighborTable table = build_dine_table(fine);
  const int64_t coarse_n = vertex_count(level - 1);
  IndexMatrix coarse = head_rows(table.slots, coarse_n);
  Rng rng(7);
  Value<float> x = Value<float>::leaf(Tensor<float>::normal({fine.num_vertices(), 64}, rng));
  for (auto _ : state) {
    Value<float> out = pool_rows(x, coarse, PoolMode::Mean);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * fine.num_vertices());
}

void BM_GenerateMesh(benchmark::State& state) {
  const int level = int(state.range(0));
  for (auto _ : state) {
    IcoSphere mesh = generate(level);
    benchmark::DoNotOptimize(mesh.vertices.data());
  }
}

void BM_BuildTable(benchmark::State& state) {
  const int level = int(state.range(0));
  IcoSphere mesh = generate(level);
  for (auto _ : state) {
    NeighborTable t = build_dine_table(mesh);
    benchmark::DoNotOptimize(t.slots.data.data());
  }
}

void BM_ModelForward(benchmark::State& state) {
  ModelSpec spec;
  spec.variant = Variant::Unet18Dine;
  spec.top_level = 4;
  spec.base_channels = 32;
  spec.in_channels = 3;
  spec.out_channels = 36;
  auto hier = Hierarchy::build(4);
  Rng rng(7);
  Model<float> model = build_model<float>(spec, hier, rng);
  Value<float> x =
      Value<float>::leaf(Tensor<float>::normal({vertex_count(4), 3}, rng));
  for (auto _ : state) {
    Value<float> out = model.forward(x, 1, false);
    benchmark::DoNotOptimize(out.data().data());
  }
}

}  // namespace

BENCHMARK(BM_DineConvForward)->Args({4, 64})->Args({5, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RePaConvForward)->Args({4, 64})->Args({5, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DineConvBackward)->Args({4, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MeanPool)->Arg(4)->Arg(5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateMesh)->Arg(4)->Arg(6)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BuildTable)->Arg(4)->Arg(5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
