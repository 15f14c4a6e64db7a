#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

// Dense kernels behind the tensor library and the surface-distance metrics.
//
// Each kernel exists twice: `serial::` is the reference loop nest and `omp::`
// is the OpenMP version. The parallel versions split work over independent
// output rows only and keep the per-element accumulation order of the serial
// loop, so both produce bit-identical results for any thread count. The
// unqualified entry points dispatch to `omp::` when the work is large enough
// to amortize a parallel region.
namespace samri::kernels {

enum class Trans { N, T };

/// C[M,N] = op(A) op(B) (+ C when accumulate). op(A) is M x K, op(B) is K x N;
/// A and B are row-major in their stored (untransposed) layout.
struct GemmArgs {
  Trans ta = Trans::N;
  Trans tb = Trans::N;
  std::size_t m = 0, n = 0, k = 0;
  const double* a = nullptr;
  const double* b = nullptr;
  double* c = nullptr;
  bool accumulate = false;
};

using Point = std::pair<int, int>;  // (x, y)

/// out[i] = min_j |a_i - b_j|^2 (exact integers).
namespace serial {
void gemm(const GemmArgs& g);
void nearest_sq_dist(std::span<const Point> a, std::span<const Point> b, std::span<std::int64_t> out);
void scale_add(std::span<double> y, std::span<const double> x, double alpha);
}  // namespace serial

namespace omp {
void gemm(const GemmArgs& g);
void nearest_sq_dist(std::span<const Point> a, std::span<const Point> b, std::span<std::int64_t> out);
void scale_add(std::span<double> y, std::span<const double> x, double alpha);
}  // namespace omp

void gemm(const GemmArgs& g);
void nearest_sq_dist(std::span<const Point> a, std::span<const Point> b, std::span<std::int64_t> out);

/// Work (multiply-adds) above which the dispatchers go parallel.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

int max_threads();

}  // namespace samri::kernels
