#include "samri/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include "samri/error.hpp"
#include "samri/rng.hpp"

namespace samri {

std::vector<ObjectTemplate> PhantomSpec::default_templates() {
  return {
      {ObjectKind::Ellipsoid, "organ", 6.0, 14.0, 140.0, 200.0, 0.0},
      {ObjectKind::Blob, "lesion", 2.5, 6.0, 180.0, 240.0, 0.0},
      {ObjectKind::ThinShell, "rim", 7.0, 12.0, 150.0, 220.0, 2.5},
      {ObjectKind::Ellipsoid, "gland", 3.5, 8.0, 30.0, 60.0, 0.0},
  };
}

namespace {

using Mask3 = std::vector<std::uint8_t>;

struct Box3 {
  std::array<long, 3> lo;
  std::array<long, 3> hi;  // inclusive
};

struct Ellipsoid {
  std::array<double, 3> center;  // voxel coordinates
  std::array<double, 3> semi;    // mm
  double angle;                  // rotation about z

  bool contains(const std::array<double, 3>& p, const std::array<double, 3>& spacing, double shrink = 0.0) const {
    const double dx = (p[0] - center[0]) * spacing[0];
    const double dy = (p[1] - center[1]) * spacing[1];
    const double dz = (p[2] - center[2]) * spacing[2];
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    const double a = semi[0] - shrink, b = semi[1] - shrink, w = semi[2] - shrink;
    if (a <= 0 || b <= 0 || w <= 0) return false;
    return (u * u) / (a * a) + (v * v) / (b * b) + (dz * dz) / (w * w) <= 1.0;
  }
};

// Keeps only the largest 6-connected component of `mask`.
void keep_largest_component(Mask3& mask, const Dims3& d) {
  std::vector<int> comp(mask.size(), -1);
  std::vector<std::size_t> sizes;
  std::queue<std::size_t> q;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || comp[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    comp[start] = id;
    q.push(start);
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      ++sizes[id];
      const std::size_t x = i % d[0], y = (i / d[0]) % d[1], z = i / (d[0] * d[1]);
      auto visit = [&](std::size_t j) {
        if (mask[j] && comp[j] < 0) {
          comp[j] = id;
          q.push(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < d[0]) visit(i + 1);
      if (y > 0) visit(i - d[0]);
      if (y + 1 < d[1]) visit(i + d[0]);
      if (z > 0) visit(i - d[0] * d[1]);
      if (z + 1 < d[2]) visit(i + d[0] * d[1]);
    }
  }
  if (sizes.size() <= 1) return;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (comp[i] != best) mask[i] = 0;
}

std::array<double, 3> draw_semi_axes(const ObjectTemplate& t, const PhantomSpec& spec, Xoshiro256& rng) {
  std::array<double, 3> semi{};
  for (int a = 0; a < 3; ++a) {
    // largest radius that still leaves a one-voxel margin on this axis
    const double fit = (static_cast<double>(spec.dims[a]) - 3.0) / 2.0 * spec.spacing[a];
    if (t.min_radius_mm > fit)
      throw Error(ErrorCode::SpecInfeasible, "template '" + t.name + "' min radius " + std::to_string(t.min_radius_mm) +
                                                 " mm does not fit axis " + std::to_string(a));
    semi[a] = std::min(rng.uniform(t.min_radius_mm, t.max_radius_mm), fit);
  }
  return semi;
}

// Rasterizes one object into a full-volume mask at a random position.
Mask3 rasterize(const ObjectTemplate& t, const std::array<double, 3>& semi, const PhantomSpec& spec, Xoshiro256& rng) {
  const Dims3& d = spec.dims;
  const auto& sp = spec.spacing;
  std::array<double, 3> center{};
  for (int a = 0; a < 3; ++a) {
    const double r = semi[a] / sp[a];
    center[a] = rng.uniform(1.0 + r, static_cast<double>(d[a]) - 2.0 - r);
  }
  const double angle = rng.uniform(0.0, std::numbers::pi);

  std::vector<Ellipsoid> parts;
  if (t.kind == ObjectKind::Blob) {
    const auto lobes = static_cast<int>(rng.between(2, 4));
    Ellipsoid prev{center, semi, angle};
    parts.push_back(prev);
    for (int k = 1; k < lobes; ++k) {
      const double scale = rng.uniform(0.6, 1.0);
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double step = 0.6 * std::min(prev.semi[0], prev.semi[1]);
      Ellipsoid next = prev;
      next.center[0] = std::clamp(prev.center[0] + step * std::cos(theta) / sp[0], 1.0, d[0] - 2.0);
      next.center[1] = std::clamp(prev.center[1] + step * std::sin(theta) / sp[1], 1.0, d[1] - 2.0);
      for (auto& s : next.semi) s = std::max(t.min_radius_mm * 0.6, s * scale);
      parts.push_back(next);
      prev = next;
    }
  } else {
    parts.push_back({center, semi, angle});
  }

  Mask3 mask(d[0] * d[1] * d[2], 0);
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const std::array<double, 3> p{double(x), double(y), double(z)};
        bool in = false;
        for (const auto& e : parts) {
          if (!e.contains(p, sp)) continue;
          in = t.kind != ObjectKind::ThinShell || !e.contains(p, sp, t.shell_thickness_mm);
          if (in) break;
        }
        if (in) mask[x + d[0] * (y + d[1] * z)] = 1;
      }
  keep_largest_component(mask, d);
  return mask;
}

}  // namespace

std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec) {
  for (auto e : spec.dims)
    if (e < 8) throw Error(ErrorCode::SpecInfeasible, "every phantom axis needs at least 8 voxels");
  if (spec.max_objects > 0 && spec.templates.empty())
    throw Error(ErrorCode::SpecInfeasible, "objects requested but no templates given");
  if (spec.min_objects > spec.max_objects) throw Error(ErrorCode::SpecInfeasible, "min_objects > max_objects");

  const Dims3& d = spec.dims;
  const std::size_t n = d[0] * d[1] * d[2];
  Xoshiro256 geo(derive_seed(spec.seed, stream_tag("phantom.geometry")));
  Xoshiro256 noise(derive_seed(spec.seed, stream_tag("phantom.noise")));

  LabelVolume labels;
  labels.dims = d;
  labels.labels.assign(n, 0);
  std::vector<double> tissue(n, spec.air_intensity);

  // body: an axis-aligned elliptic cylinder filling most of the in-plane field
  const double bx = 0.46 * d[0], by = 0.44 * d[1];
  const double cx = (d[0] - 1) / 2.0, cy = (d[1] - 1) / 2.0;
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const double u = (x - cx) / bx, v = (y - cy) / by;
        if (u * u + v * v <= 1.0) tissue[x + d[0] * (y + d[1] * z)] = spec.body_intensity;
      }

  const auto count = static_cast<std::size_t>(
      geo.between(static_cast<std::int64_t>(spec.min_objects), static_cast<std::int64_t>(spec.max_objects)));
  std::vector<std::size_t> name_uses(spec.templates.size(), 0);
  for (std::size_t slot = 0; slot < count; ++slot) {
    const std::size_t ti = slot % spec.templates.size();
    const ObjectTemplate& t = spec.templates[ti];
    const auto semi = draw_semi_axes(t, spec, geo);
    const double intensity = geo.uniform(t.intensity_lo, t.intensity_hi);
    const auto id = static_cast<std::uint16_t>(slot + 1);

    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      Mask3 m = rasterize(t, semi, spec, geo);
      bool empty = true, overlap = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (!m[i]) continue;
        empty = false;
        if (labels.labels[i] != 0) {
          overlap = true;
          break;
        }
      }
      if (empty || overlap) continue;
      for (std::size_t i = 0; i < n; ++i)
        if (m[i]) {
          labels.labels[i] = id;
          tissue[i] = intensity;
        }
      placed = true;
    }
    if (!placed)
      throw Error(ErrorCode::SpecInfeasible, "could not place object " + std::to_string(slot + 1) + " without overlap");
    const std::size_t use = name_uses[ti]++;
    labels.target_names[id] = use == 0 ? t.name : t.name + "_" + std::to_string(use + 1);
  }

  Volume vol;
  vol.dims = d;
  vol.spacing = spec.spacing;
  vol.source = "phantom:seed=" + std::to_string(spec.seed);
  vol.voxels.resize(n);
  for (std::size_t i = 0; i < n; ++i) vol.voxels[i] = static_cast<float>(tissue[i] + spec.noise_sigma * noise.normal());
  return {std::move(vol), std::move(labels)};
}

std::size_t count_components_6(const LabelVolume& labels, std::uint16_t label) {
  Mask3 mask(labels.labels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = labels.labels[i] == label;
  const Dims3& d = labels.dims;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::size_t comps = 0;
  std::queue<std::size_t> q;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask[s] || seen[s]) continue;
    ++comps;
    seen[s] = 1;
    q.push(s);
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      const std::size_t x = i % d[0], y = (i / d[0]) % d[1], z = i / (d[0] * d[1]);
      auto visit = [&](std::size_t j) {
        if (mask[j] && !seen[j]) {
          seen[j] = 1;
          q.push(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < d[0]) visit(i + 1);
      if (y > 0) visit(i - d[0]);
      if (y + 1 < d[1]) visit(i + d[0]);
      if (z > 0) visit(i - d[0] * d[1]);
      if (z + 1 < d[2]) visit(i + d[0] * d[1]);
    }
  }
  return comps;
}

}  // namespace samri
