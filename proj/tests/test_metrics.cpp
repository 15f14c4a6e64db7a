#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "samri/error.hpp"
#include "samri/metrics.hpp"
#include "samri/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace samri;
using namespace samri::test;

namespace {

BinaryMask from_points(std::size_t h, std::size_t w, std::initializer_list<SurfacePoint> pts) {
  BinaryMask m(h, w);
  for (auto [x, y] : pts) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("dsc examples") {
    BinaryMask a(1, 4), b(1, 4);
    a.data = {1, 1, 0, 0};
    b.data = {1, 0, 1, 0};
    CHECK(dsc(a, b) == 0.5);
    CHECK(dsc(a, a) == 1.0);
    BinaryMask c(1, 4);
    c.data = {0, 0, 1, 1};
    CHECK(dsc(a, c) == 0.0);
    CHECK(dsc(BinaryMask(2, 2), BinaryMask(2, 2)) == 1.0);
    CHECK(dsc(BinaryMask(1, 4), a) == 0.0);
    CHECK_THROWS_AS(dsc(a, BinaryMask(4, 1)), Error);
  }

  TEST_CASE("surface point examples") {
    const auto one = surface_points(from_points(5, 5, {{2, 3}}));
    CHECK(one == std::vector<SurfacePoint>{{2, 3}});
    BinaryMask sq(5, 5);
    for (std::size_t y = 1; y <= 3; ++y)
      for (std::size_t x = 1; x <= 3; ++x) sq.at(y, x) = 1;
    const auto s = surface_points(sq);
    CHECK(s.size() == 8);
    CHECK(std::find(s.begin(), s.end(), SurfacePoint{2, 2}) == s.end());
    CHECK(surface_points(BinaryMask(3, 3)).empty());
    // the image border counts as background
    CHECK(surface_points(BinaryMask(3, 3, 1)).size() == 8);
  }

  TEST_CASE("hausdorff and msd examples") {
    const std::vector<SurfacePoint> a{{0, 0}}, b{{3, 4}}, a2{{0, 0}, {0, 1}};
    CHECK(hausdorff(a, b) == 5.0);
    CHECK(hausdorff(a2, b) == 5.0);
    CHECK(hausdorff(b, b) == 0.0);
    CHECK(msd(a, b) == 5.0);
    CHECK(msd(b, b) == 0.0);
    const std::vector<SurfacePoint> c{{0, 0}, {10, 0}};
    CHECK(msd(c, a) == 2.5);
    CHECK_THROWS_AS(hausdorff({}, a), Error);
    CHECK_THROWS_AS(msd(a, {}), Error);
  }

  TEST_CASE("metrics match brute-force oracles on 1000 random mask pairs") {
    Xoshiro256 rng(99);
    std::size_t compared = 0;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t h = 1 + rng.below(32), w = 1 + rng.below(32);
      const auto a = test::random_mask(rng, h, w, rng.uniform(0.02, 0.7));
      const auto b = test::random_mask(rng, h, w, rng.uniform(0.02, 0.7));
      REQUIRE(dsc(a, b) == brute_dsc(a, b));
      REQUIRE(dsc(a, b) == dsc(b, a));
      const auto sa = surface_points(a), sb = surface_points(b);
      REQUIRE(sa == brute_surface(a));
      if (sa.empty() || sb.empty()) continue;
      ++compared;
      const double hd = hausdorff(sa, sb), md = msd(sa, sb);
      REQUIRE(std::abs(hd - std::max(directed_sup(sa, sb), directed_sup(sb, sa))) < 1e-9);
      REQUIRE(std::abs(md - 0.5 * (directed_mean(sa, sb) + directed_mean(sb, sa))) < 1e-9);
      REQUIRE(hd >= md);
      REQUIRE(md >= 0);
      REQUIRE(hd == hausdorff(sb, sa));
      REQUIRE(std::abs(md - msd(sb, sa)) < 1e-12);
    }
    CHECK(compared > 900);
  }

  TEST_CASE("size bins at the cut points") {
    CHECK(size_bin(20, 64, 64) == SizeBin::Small);
    CHECK(size_bin(21, 64, 64) == SizeBin::Medium);
    CHECK(size_bin(143, 64, 64) == SizeBin::Medium);
    CHECK(size_bin(144, 64, 64) == SizeBin::Large);
    // exactly 0.5% and 3.5% of 1000 pixels are medium
    CHECK(size_bin(5, 10, 100) == SizeBin::Medium);
    CHECK(size_bin(35, 10, 100) == SizeBin::Medium);
    CHECK(size_bin(36, 10, 100) == SizeBin::Large);
    CHECK(size_bin_name(SizeBin::Large) == "large");
  }

  TEST_CASE("adding a pixel only moves the bin upward") {
    for (std::size_t area : {64u * 64u, 37u * 21u, 1000u, 7u}) {
      int prev = 0;
      for (std::size_t fg = 0; fg <= area; ++fg) {
        const int b = static_cast<int>(size_bin(fg, 1, area));
        REQUIRE(b >= prev);
        // percentage comparison in floating point as a second opinion
        const double pct = 100.0 * static_cast<double>(fg) / static_cast<double>(area);
        const int expect = pct < 0.5 ? 0 : (pct > 3.5 ? 2 : 1);
        if (std::abs(pct - 0.5) > 1e-9 && std::abs(pct - 3.5) > 1e-9) REQUIRE(b == expect);
        prev = b;
      }
    }
  }

  TEST_CASE("wilcoxon examples") {
    const std::vector<double> d3{1, 2, 3};
    const auto r = wilcoxon_signed_rank(d3);
    CHECK(r.w == 0);
    CHECK(r.w_plus == 6);
    CHECK(r.p == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(r.exact);
    CHECK(wilcoxon_signed_rank(std::vector<double>{5}).p == 1.0);
    const auto tie = wilcoxon_signed_rank(std::vector<double>{1, -1});
    CHECK(tie.w_plus == 1.5);
    CHECK(tie.w_minus == 1.5);
    CHECK(tie.p == 1.0);
    CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{0, 0}), Error);
    CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{1, std::nan("")}), Error);
  }

  TEST_CASE("exact p equals full enumeration for n up to 12") {
    Xoshiro256 rng(12);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 1 + rng.below(12);
      std::vector<double> d(n);
      for (auto& v : d) v = static_cast<double>(rng.between(-6, 6));
      if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0; })) d[0] = 1;
      const auto r = wilcoxon_signed_rank(d);
      REQUIRE(r.exact);
      REQUIRE(r.p == doctest::Approx(enumerated_p(d)).epsilon(1e-12));
    }
  }

  TEST_CASE("normal approximation above the exact limit") {
    // scipy.stats.wilcoxon(d, correction=True, method="approx") gives 162.5, 0.23694642861710413
    std::vector<double> d;
    for (int i = 0; i < 30; ++i) d.push_back((i % 7) - 2.5 + (i % 3 == 0 ? 0.5 : 0.0));
    const auto r = wilcoxon_signed_rank(d);
    CHECK_FALSE(r.exact);
    CHECK(r.n == 29);
    CHECK(r.w == 162.5);
    CHECK(r.p == doctest::Approx(0.23694642861710413).epsilon(1e-9));
    // forcing the approximation at small n still gives a probability
    const auto a = wilcoxon_signed_rank(std::vector<double>{1, 2, 3, 4, -5}, 0);
    CHECK_FALSE(a.exact);
    CHECK(a.p > 0);
    CHECK(a.p <= 1);
  }
}
