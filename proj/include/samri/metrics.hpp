#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "samri/grid.hpp"
#include "samri/kernels.hpp"

namespace samri {

using SurfacePoint = kernels::Point;

/// 2|S n G| / (|S| + |G|); 1.0 when both are empty. Throws DimMismatch.
double dsc(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground pixels with a 4-neighbour that is background or off-image,
/// in raster order.
std::vector<SurfacePoint> surface_points(const BinaryMask& mask);

/// Symmetric Hausdorff distance in pixels. Throws EmptySurface.
double hausdorff(std::span<const SurfacePoint> a, std::span<const SurfacePoint> b);
/// Mean of the two directed mean nearest-point distances. Throws EmptySurface.
double msd(std::span<const SurfacePoint> a, std::span<const SurfacePoint> b);

enum class SizeBin { Small, Medium, Large };
std::string_view size_bin_name(SizeBin b);

/// Cut points 0.5% and 3.5% of the image area; both bounds belong to medium.
/// Compared in integers, so no rounding is involved.
SizeBin size_bin(std::size_t foreground, std::size_t height, std::size_t width);
inline SizeBin size_bin(const BinaryMask& mask) { return size_bin(foreground_count(mask), mask.height, mask.width); }

struct WilcoxonResult {
  double w = 0;        // min(W+, W-)
  double w_plus = 0;
  double w_minus = 0;
  std::size_t n = 0;   // nonzero differences
  double p = 1.0;      // two-sided
  bool exact = true;
};

/// Largest n handled by the exact null distribution.
inline constexpr std::size_t kWilcoxonExactMaxN = 20;

/// Signed-rank test on paired differences. Zeros are dropped and tied |d|
/// share their average rank. For n <= exact_max_n, p = P(min(W+, W-) <= w)
/// under the exact null distribution of all 2^n sign patterns; above that a
/// normal approximation with tie and continuity corrections is used.
/// Throws AllZeroDifferences.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs, std::size_t exact_max_n = kWilcoxonExactMaxN);

}  // namespace samri
