// Serial reference vs OpenMP kernels. Arg = image side (pixels).

#include <benchmark/benchmark.h>

#include <random>

#include "dve/closed_set.hpp"
#include "dve/distillation.hpp"
#include "dve/map3d.hpp"

using namespace dve;

namespace {

constexpr std::size_t kDim = 256;

DenseEmbeddingMap random_map(std::size_t side, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(side * side * dim);
  for (double& x : v) x = n(rng);
  return DenseEmbeddingMap(side, side, dim, std::move(v));
}

TeacherVolume full_teacher(std::size_t side) {
  auto m = random_map(side, kDim, 2);
  return TeacherVolume{std::move(m), std::vector<std::uint8_t>(side * side, 1), side * side};
}

Exec exec_of(const benchmark::State& s) { return s.range(1) ? Exec::parallel : Exec::serial; }

void BM_Loss(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto pred = random_map(side, kDim, 1);
  const auto teacher = full_teacher(side);
  for (auto _ : state) benchmark::DoNotOptimize(cosine_distill_loss(pred, teacher, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}

void BM_LossGrad(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto pred = random_map(side, kDim, 1);
  const auto teacher = full_teacher(side);
  for (auto _ : state) benchmark::DoNotOptimize(cosine_distill_loss_grad(pred, teacher, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}

void BM_StudentForward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto features = random_map(side, 64, 3);
  const std::vector<std::size_t> dims{64, 128, kDim};
  const auto params = init_student(dims, 4);
  for (auto _ : state) benchmark::DoNotOptimize(student_forward(features, params, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}

void BM_ClassifyArgmax(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto map = random_map(side, kDim, 5);
  const auto rows = random_map(1, kDim * 40, 6);
  Matrix m(40, kDim);
  m.data = rows.data();
  std::vector<std::string> names;
  for (int c = 0; c < 40; ++c) names.push_back("c" + std::to_string(c));
  const auto refs = ReferenceSet::from_rows(names, m);
  for (auto _ : state) benchmark::DoNotOptimize(classify_argmax(map, refs, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}

void BM_ProbePredict(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto map = random_map(side, kDim, 7);
  ProbeWeights w{Matrix(40, kDim), std::vector<double>(40, 0.0)};
  w.weight.data = random_map(1, kDim * 40, 8).data();
  for (auto _ : state) benchmark::DoNotOptimize(probe_predict(map, w, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(side * side));
}

void BM_MapQuery(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto emb = random_map(side, kDim, 9);
  MapBuilder b(0.01, kDim);
  for (std::size_t p = 0; p < emb.pixels(); ++p)
    b.insert({0.01 * static_cast<double>(p % side), 0.01 * static_cast<double>(p / side), 0.0}, emb.pixel(p));
  const auto map = map_freeze(b).map;
  const auto q = random_map(1, kDim, 10).data();
  for (auto _ : state) benchmark::DoNotOptimize(map_query(map, q, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(map.size()));
}

void sizes(benchmark::internal::Benchmark* b) {
  for (int side : {32, 96})
    for (int par : {0, 1}) b->Args({side, par});
  b->ArgNames({"side", "parallel"});
}

}  // namespace

BENCHMARK(BM_Loss)->Apply(sizes);
BENCHMARK(BM_LossGrad)->Apply(sizes);
BENCHMARK(BM_StudentForward)->Apply(sizes);
BENCHMARK(BM_ClassifyArgmax)->Apply(sizes);
BENCHMARK(BM_ProbePredict)->Apply(sizes);
BENCHMARK(BM_MapQuery)->Apply(sizes);

BENCHMARK_MAIN();
