#include "samri/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "samri/error.hpp"

namespace samri {

double dsc(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw Error(ErrorCode::DimMismatch, "dsc: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                                            " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  std::size_t inter = 0, ns = 0, ng = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool s = pred.data[i] != 0, g = gt.data[i] != 0;
    inter += s && g;
    ns += s;
    ng += g;
  }
  if (ns + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(ns + ng);
}

std::vector<SurfacePoint> surface_points(const BinaryMask& mask) {
  std::vector<SurfacePoint> out;
  const std::size_t h = mask.height, w = mask.width;
  auto fg = [&](std::size_t y, std::size_t x) { return mask.at(y, x) != 0; };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!fg(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !fg(y - 1, x) || !fg(y + 1, x) ||
                        !fg(y, x - 1) || !fg(y, x + 1);
      if (edge) out.emplace_back(static_cast<int>(x), static_cast<int>(y));
    }
  return out;
}

namespace {

std::vector<std::int64_t> directed(std::span<const SurfacePoint> a, std::span<const SurfacePoint> b) {
  std::vector<std::int64_t> d(a.size());
  kernels::nearest_sq_dist(a, b, d);
  return d;
}

void require_nonempty(std::span<const SurfacePoint> a, std::span<const SurfacePoint> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptySurface, "surface distance needs two nonempty point sets");
}

}  // namespace

double hausdorff(std::span<const SurfacePoint> a, std::span<const SurfacePoint> b) {
  require_nonempty(a, b);
  const auto ab = directed(a, b), ba = directed(b, a);
  const auto m = std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
  return std::sqrt(static_cast<double>(m));
}

double msd(std::span<const SurfacePoint> a, std::span<const SurfacePoint> b) {
  require_nonempty(a, b);
  auto mean_sqrt = [](const std::vector<std::int64_t>& d) {
    double s = 0;
    for (auto v : d) s += std::sqrt(static_cast<double>(v));
    return s / static_cast<double>(d.size());
  };
  return 0.5 * (mean_sqrt(directed(a, b)) + mean_sqrt(directed(b, a)));
}

std::string_view size_bin_name(SizeBin b) {
  switch (b) {
    case SizeBin::Small: return "small";
    case SizeBin::Medium: return "medium";
    case SizeBin::Large: return "large";
  }
  return "unknown";
}

SizeBin size_bin(std::size_t foreground, std::size_t height, std::size_t width) {
  // area% < 0.5  <=>  200 fg < area;  area% > 3.5  <=>  200 fg > 7 area
  const std::size_t area = height * width;
  if (200 * foreground < area) return SizeBin::Small;
  if (200 * foreground > 7 * area) return SizeBin::Large;
  return SizeBin::Medium;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs, std::size_t exact_max_n) {
  std::vector<double> d;
  for (double v : diffs) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "wilcoxon: non-finite difference");
    if (v != 0.0) d.push_back(v);
  }
  if (d.empty()) throw Error(ErrorCode::AllZeroDifferences, "wilcoxon: every difference is zero");
  const std::size_t n = d.size();

  // doubled average ranks are integers
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<std::size_t> rank2(n);
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const std::size_t r2 = (i + 1) + (j + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  std::size_t wp2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0) wp2 += rank2[i];
  }
  const std::size_t w2 = std::min(wp2, total2 - wp2);

  WilcoxonResult r;
  r.n = n;
  r.w_plus = static_cast<double>(wp2) / 2.0;
  r.w_minus = static_cast<double>(total2 - wp2) / 2.0;
  r.w = static_cast<double>(w2) / 2.0;

  if (n <= exact_max_n) {
    // count[s] = sign patterns whose doubled W+ equals s
    std::vector<double> count(total2 + 1, 0.0);
    count[0] = 1.0;
    std::size_t reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t s = reach + 1; s-- > 0;)
        if (count[s] != 0.0) count[s + rank2[i]] += count[s];
      reach += rank2[i];
    }
    double extreme = 0.0;
    for (std::size_t s = 0; s <= total2; ++s)
      if (s <= w2 || s >= total2 - w2) extreme += count[s];
    r.p = std::min(1.0, extreme / std::ldexp(1.0, static_cast<int>(n)));
    r.exact = true;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(r.w - mean) - 0.5) / std::sqrt(var);
    r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    r.exact = false;
  }
  return r;
}

}  // namespace samri
