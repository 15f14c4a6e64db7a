#include "samri/kernels.hpp"

#include <algorithm>
#include <limits>

#include <omp.h>

namespace samri::kernels {

namespace {

// One output row of C. Both variants call this so the floating-point
// accumulation order per element is shared.
inline void gemm_row(const GemmArgs& g, std::size_t i) {
  double* crow = g.c + i * g.n;
  if (!g.accumulate) std::fill(crow, crow + g.n, 0.0);
  if (g.tb == Trans::N) {
    for (std::size_t p = 0; p < g.k; ++p) {
      const double aip = g.ta == Trans::N ? g.a[i * g.k + p] : g.a[p * g.m + i];
      if (aip == 0.0) continue;
      const double* brow = g.b + p * g.n;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < g.n; ++j) {
      const double* brow = g.b + j * g.k;
      double acc = 0.0;
      if (g.ta == Trans::N) {
        const double* arow = g.a + i * g.k;
        for (std::size_t p = 0; p < g.k; ++p) acc += arow[p] * brow[p];
      } else {
        for (std::size_t p = 0; p < g.k; ++p) acc += g.a[p * g.m + i] * brow[p];
      }
      crow[j] += acc;
    }
  }
}

inline std::int64_t nearest_one(const Point& p, std::span<const Point> b) {
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (const auto& q : b) {
    const std::int64_t dx = p.first - q.first, dy = p.second - q.second;
    best = std::min(best, dx * dx + dy * dy);
  }
  return best;
}

}  // namespace

namespace serial {

void gemm(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) gemm_row(g, i);
}

void nearest_sq_dist(std::span<const Point> a, std::span<const Point> b, std::span<std::int64_t> out) {
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = nearest_one(a[i], b);
}

void scale_add(std::span<double> y, std::span<const double> x, double alpha) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace serial

namespace omp {

void gemm(const GemmArgs& g) {
  const auto m = static_cast<std::ptrdiff_t>(g.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(g, static_cast<std::size_t>(i));
}

void nearest_sq_dist(std::span<const Point> a, std::span<const Point> b, std::span<std::int64_t> out) {
  const auto n = static_cast<std::ptrdiff_t>(a.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = nearest_one(a[i], b);
}

void scale_add(std::span<double> y, std::span<const double> x, double alpha) {
  const auto n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace omp

int max_threads() { return omp_get_max_threads(); }

void gemm(const GemmArgs& g) {
  if (g.m > 1 && g.m * g.n * g.k >= kParallelThreshold && omp_get_max_threads() > 1 && !omp_in_parallel())
    omp::gemm(g);
  else
    serial::gemm(g);
}

void nearest_sq_dist(std::span<const Point> a, std::span<const Point> b, std::span<std::int64_t> out) {
  if (a.size() * b.size() >= kParallelThreshold && omp_get_max_threads() > 1 && !omp_in_parallel())
    omp::nearest_sq_dist(a, b, out);
  else
    serial::nearest_sq_dist(a, b, out);
}

}  // namespace samri::kernels
