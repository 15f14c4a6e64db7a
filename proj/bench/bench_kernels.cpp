// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "samri/kernels.hpp"
#include "samri/rng.hpp"

using namespace samri;
using namespace samri::kernels;

namespace {

struct GemmData {
  std::vector<double> a, b, c;
  GemmArgs args;
  explicit GemmData(std::size_t n) : a(n * n), b(n * n), c(n * n) {
    Xoshiro256 rng(1);
    for (auto& x : a) x = rng.uniform(-1, 1);
    for (auto& x : b) x = rng.uniform(-1, 1);
    args.m = args.n = args.k = n;
    args.a = a.data();
    args.b = b.data();
    args.c = c.data();
  }
};

template <void (*Gemm)(const GemmArgs&)>
void bm_gemm(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  GemmData d(n);
  for (auto _ : st) {
    Gemm(d.args);
    benchmark::DoNotOptimize(d.c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n * n * n));
}

std::vector<Point> ring(std::size_t n, int cx, int cy, int r, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<Point> p(n);
  for (auto& [x, y] : p) {
    x = cx + static_cast<int>(rng.between(-r, r));
    y = cy + static_cast<int>(rng.between(-r, r));
  }
  return p;
}

template <void (*Nearest)(std::span<const Point>, std::span<const Point>, std::span<std::int64_t>)>
void bm_nearest(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = ring(n, 100, 100, 80, 2), b = ring(n, 110, 95, 80, 3);
  std::vector<std::int64_t> out(n);
  for (auto _ : st) {
    Nearest(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n * n));
}

}  // namespace

BENCHMARK(bm_gemm<serial::gemm>)->Name("gemm/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_gemm<omp::gemm>)->Name("gemm/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(bm_nearest<serial::nearest_sq_dist>)->Name("nearest_sq_dist/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(bm_nearest<omp::nearest_sq_dist>)->Name("nearest_sq_dist/omp")->RangeMultiplier(4)->Range(64, 4096);

BENCHMARK_MAIN();
