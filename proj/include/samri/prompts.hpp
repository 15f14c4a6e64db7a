#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "samri/error.hpp"
#include "samri/grid.hpp"
#include "samri/rng.hpp"

namespace samri {

/// Inclusive pixel box.
struct BoxPrompt {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  bool valid_in(std::size_t width, std::size_t height) const {
    return 0 <= x_min && x_min <= x_max && x_max < static_cast<int>(width) && 0 <= y_min && y_min <= y_max &&
           y_max < static_cast<int>(height);
  }
  bool operator==(const BoxPrompt&) const = default;
};

enum class PointLabel : std::uint8_t { Background = 0, Foreground = 1 };

struct PointPrompt {
  int x = 0;
  int y = 0;
  PointLabel label = PointLabel::Foreground;
  bool operator==(const PointPrompt&) const = default;
};

enum class PromptRegime { BoxOnly, BoxPoint };
std::string_view regime_name(PromptRegime r);
PromptRegime parse_regime(std::string_view s);

struct PromptSet {
  BoxPrompt box;
  std::vector<PointPrompt> points;
  PromptRegime regime = PromptRegime::BoxOnly;
};

/// Throws EmptyMask.
BoxPrompt tightest_box(const BinaryMask& mask);

/// Shifts each coordinate by draw() (expected uniform in [-max_shift, max_shift]),
/// clamps to the image and re-draws a degenerate result; after `max_retries`
/// failed attempts the input box is returned unchanged.
template <class Draw>
BoxPrompt jitter_box_with(const BoxPrompt& box, std::size_t width, std::size_t height, Draw&& draw,
                          int max_retries = 8) {
  const int w = static_cast<int>(width), h = static_cast<int>(height);
  auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    BoxPrompt b;
    b.x_min = clamp(box.x_min + draw(), w - 1);
    b.y_min = clamp(box.y_min + draw(), h - 1);
    b.x_max = clamp(box.x_max + draw(), w - 1);
    b.y_max = clamp(box.y_max + draw(), h - 1);
    if (b.x_min <= b.x_max && b.y_min <= b.y_max) return b;
  }
  return box;
}

BoxPrompt jitter_box(const BoxPrompt& box, std::size_t width, std::size_t height, Xoshiro256& rng,
                     int max_shift = 20);

/// City-block distance from each foreground pixel to the nearest background
/// pixel, with everything outside the image counting as background.
/// Background pixels get 0.
Grid2<int> inset_distance(const BinaryMask& mask);

/// Foreground pixel of maximal inset distance; ties to the lowest (y, x).
PointPrompt select_point(const BinaryMask& mask);

/// Uniformly random foreground pixel (ablation alternative to select_point).
PointPrompt select_random_point(const BinaryMask& mask, Xoshiro256& rng);

enum class PointRule { MaxInset, UniformRandom };

struct PromptOptions {
  PromptRegime regime = PromptRegime::BoxOnly;
  bool jitter = false;
  int max_shift = 20;
  PointRule point_rule = PointRule::MaxInset;
};

/// Box (optionally jittered) plus one foreground point for the box+point
/// regime. `rng` is required when jitter or the random point rule is on.
PromptSet make_prompts(const BinaryMask& mask, const PromptOptions& opt, Xoshiro256* rng = nullptr);

}  // namespace samri
