#include "samri/prompts.hpp"

#include <deque>
#include <limits>

namespace samri {

std::string_view regime_name(PromptRegime r) { return r == PromptRegime::BoxOnly ? "box" : "box_point"; }

PromptRegime parse_regime(std::string_view s) {
  if (s == "box" || s == "box_only") return PromptRegime::BoxOnly;
  if (s == "box_point" || s == "bp") return PromptRegime::BoxPoint;
  throw Error(ErrorCode::InvalidArgument, "unknown prompt regime '" + std::string(s) + "'");
}

BoxPrompt tightest_box(const BinaryMask& mask) {
  BoxPrompt b{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      b.x_min = std::min(b.x_min, static_cast<int>(x));
      b.y_min = std::min(b.y_min, static_cast<int>(y));
      b.x_max = std::max(b.x_max, static_cast<int>(x));
      b.y_max = std::max(b.y_max, static_cast<int>(y));
    }
  if (b.x_max < 0) throw Error(ErrorCode::EmptyMask, "cannot box an empty mask");
  return b;
}

BoxPrompt jitter_box(const BoxPrompt& box, std::size_t width, std::size_t height, Xoshiro256& rng, int max_shift) {
  return jitter_box_with(box, width, height, [&] { return static_cast<int>(rng.between(-max_shift, max_shift)); });
}

Grid2<int> inset_distance(const BinaryMask& mask) {
  Grid2<int> dist(mask.height, mask.width, 0);
  std::deque<std::size_t> frontier;
  const std::size_t h = mask.height, w = mask.width;
  // seed: foreground pixels touching background or the image border are at distance 1
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w || !mask.at(y - 1, x) || !mask.at(y + 1, x) ||
                        !mask.at(y, x - 1) || !mask.at(y, x + 1);
      if (edge) {
        dist.at(y, x) = 1;
        frontier.push_back(y * w + x);
      }
    }
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    const std::size_t y = i / w, x = i % w;
    const int next = dist.data[i] + 1;
    auto visit = [&](std::size_t yy, std::size_t xx) {
      const std::size_t j = yy * w + xx;
      if (mask.data[j] && dist.data[j] == 0) {
        dist.data[j] = next;
        frontier.push_back(j);
      }
    };
    if (y > 0) visit(y - 1, x);
    if (y + 1 < h) visit(y + 1, x);
    if (x > 0) visit(y, x - 1);
    if (x + 1 < w) visit(y, x + 1);
  }
  return dist;
}

PointPrompt select_point(const BinaryMask& mask) {
  const Grid2<int> d = inset_distance(mask);
  int best = 0;
  PointPrompt p;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (d.at(y, x) > best) {
        best = d.at(y, x);
        p = {static_cast<int>(x), static_cast<int>(y), PointLabel::Foreground};
      }
  if (best == 0) throw Error(ErrorCode::EmptyMask, "no foreground pixel to select");
  return p;
}

PointPrompt select_random_point(const BinaryMask& mask, Xoshiro256& rng) {
  const std::size_t n = foreground_count(mask);
  if (n == 0) throw Error(ErrorCode::EmptyMask, "no foreground pixel to select");
  std::size_t pick = rng.below(n);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.data[i]) continue;
    if (pick-- == 0)
      return {static_cast<int>(i % mask.width), static_cast<int>(i / mask.width), PointLabel::Foreground};
  }
  return {};
}

PromptSet make_prompts(const BinaryMask& mask, const PromptOptions& opt, Xoshiro256* rng) {
  PromptSet ps;
  ps.regime = opt.regime;
  ps.box = tightest_box(mask);
  if (opt.jitter) {
    if (!rng) throw Error(ErrorCode::InvalidArgument, "box jitter needs an rng");
    ps.box = jitter_box(ps.box, mask.width, mask.height, *rng, opt.max_shift);
  }
  if (opt.regime == PromptRegime::BoxPoint) {
    if (opt.point_rule == PointRule::UniformRandom) {
      if (!rng) throw Error(ErrorCode::InvalidArgument, "random point rule needs an rng");
      ps.points.push_back(select_random_point(mask, *rng));
    } else {
      ps.points.push_back(select_point(mask));
    }
  }
  return ps;
}

}  // namespace samri
