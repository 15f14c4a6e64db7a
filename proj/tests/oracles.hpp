#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "samri/grid.hpp"
#include "samri/metrics.hpp"

// Brute-force references shared by the unit tests and the acceptance run.
namespace samri::test {

inline double brute_dsc(const BinaryMask& a, const BinaryMask& b) {
  double inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] && b.data[i];
    sa += a.data[i];
    sb += b.data[i];
  }
  return sa + sb == 0 ? 1.0 : 2 * inter / (sa + sb);
}

inline std::vector<SurfacePoint> brute_surface(const BinaryMask& m) {
  std::vector<SurfacePoint> out;
  const int h = static_cast<int>(m.height), w = static_cast<int>(m.width);
  auto fg = [&](int y, int x) {
    return x >= 0 && y >= 0 && x < w && y < h && m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.push_back({x, y});
  return out;
}

inline double dist(const SurfacePoint& p, const SurfacePoint& q) {
  return std::hypot(static_cast<double>(p.first - q.first), static_cast<double>(p.second - q.second));
}

inline double directed_sup(const std::vector<SurfacePoint>& a, const std::vector<SurfacePoint>& b) {
  double sup = 0;
  for (const auto& p : a) {
    double inf = std::numeric_limits<double>::infinity();
    for (const auto& q : b) inf = std::min(inf, dist(p, q));
    sup = std::max(sup, inf);
  }
  return sup;
}

inline double directed_mean(const std::vector<SurfacePoint>& a, const std::vector<SurfacePoint>& b) {
  double acc = 0;
  for (const auto& p : a) {
    double inf = std::numeric_limits<double>::infinity();
    for (const auto& q : b) inf = std::min(inf, dist(p, q));
    acc += inf;
  }
  return acc / static_cast<double>(a.size());
}

// Two-sided p from all 2^n sign assignments of the observed ranks.
inline double enumerated_p(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double v : diffs)
    if (v != 0) d.push_back(v);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2;
  }
  double total = 0, wp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) wp += rank[i];
  }
  const double w_obs = std::min(wp, total - wp);
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += rank[i];
    if (std::min(s, total - s) <= w_obs + 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::size_t{1} << n);
}

}  // namespace samri::test
