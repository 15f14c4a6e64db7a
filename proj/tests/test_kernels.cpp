#include <doctest.h>

#include <cstring>
#include <limits>

#include "samri/kernels.hpp"
#include "samri/rng.hpp"

using namespace samri;
using namespace samri::kernels;

namespace {

std::vector<double> random_values(Xoshiro256& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Textbook triple loop over explicitly transposed operands.
std::vector<double> naive_gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                               const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::N ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::N ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  return c;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm matches the naive oracle for every transpose combination") {
    Xoshiro256 rng(1);
    for (auto ta : {Trans::N, Trans::T})
      for (auto tb : {Trans::N, Trans::T})
        for (int trial = 0; trial < 6; ++trial) {
          const std::size_t m = 1 + rng.below(40), n = 1 + rng.below(40), k = 1 + rng.below(40);
          const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
          const auto ref = naive_gemm(ta, tb, m, n, k, a, b);
          for (int impl = 0; impl < 3; ++impl) {
            std::vector<double> c(m * n, 5.0);
            GemmArgs g{ta, tb, m, n, k, a.data(), b.data(), c.data(), false};
            if (impl == 0) serial::gemm(g);
            if (impl == 1) omp::gemm(g);
            if (impl == 2) kernels::gemm(g);
            for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
          }
        }
  }

  TEST_CASE("accumulate adds into C") {
    std::vector<double> a{1, 2}, b{3, 4}, c{10};
    serial::gemm({Trans::N, Trans::N, 1, 1, 2, a.data(), b.data(), c.data(), true});
    CHECK(c[0] == 21.0);
  }

  TEST_CASE("parallel gemm is bit-identical to serial") {
    Xoshiro256 rng(2);
    for (auto ta : {Trans::N, Trans::T})
      for (auto tb : {Trans::N, Trans::T}) {
        const std::size_t m = 97, n = 65, k = 130;
        const auto a = random_values(rng, m * k), b = random_values(rng, k * n);
        std::vector<double> cs(m * n, 0.5), cp(m * n, 0.5);
        serial::gemm({ta, tb, m, n, k, a.data(), b.data(), cs.data(), true});
        omp::gemm({ta, tb, m, n, k, a.data(), b.data(), cp.data(), true});
        CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);
      }
  }

  TEST_CASE("nearest squared distance: serial, parallel and brute force agree") {
    Xoshiro256 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Point> a(1 + rng.below(300)), b(1 + rng.below(300));
      for (auto& p : a) p = {static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64))};
      for (auto& p : b) p = {static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64))};
      std::vector<std::int64_t> s(a.size()), o(a.size());
      serial::nearest_sq_dist(a, b, s);
      omp::nearest_sq_dist(a, b, o);
      CHECK(s == o);
      for (std::size_t i = 0; i < a.size(); ++i) {
        std::int64_t best = std::numeric_limits<std::int64_t>::max();
        for (const auto& q : b) {
          const std::int64_t dx = a[i].first - q.first, dy = a[i].second - q.second;
          best = std::min(best, dx * dx + dy * dy);
        }
        REQUIRE(s[i] == best);
      }
    }
  }

  TEST_CASE("scale_add agrees across implementations") {
    Xoshiro256 rng(4);
    auto y1 = random_values(rng, 1000);
    auto y2 = y1;
    const auto x = random_values(rng, 1000);
    serial::scale_add(y1, x, 0.3);
    omp::scale_add(y2, x, 0.3);
    CHECK(y1 == y2);
  }
}
