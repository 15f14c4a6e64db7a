#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "samri/data_io.hpp"

namespace samri {

enum class ObjectKind { Ellipsoid, ThinShell, Blob };

/// One labeled structure "slot". Slot i of a phantom uses template
/// i % templates.size() and receives label id i + 1.
struct ObjectTemplate {
  ObjectKind kind = ObjectKind::Ellipsoid;
  std::string name;
  double min_radius_mm = 4.0;
  double max_radius_mm = 10.0;
  double intensity_lo = 140.0;
  double intensity_hi = 200.0;
  double shell_thickness_mm = 2.5;
};

struct PhantomSpec {
  Dims3 dims{64, 64, 20};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::vector<ObjectTemplate> templates = default_templates();
  double air_intensity = 0.0;
  double body_intensity = 80.0;
  double noise_sigma = 4.0;
  std::uint64_t seed = 0;

  static std::vector<ObjectTemplate> default_templates();
};

/// Deterministic synthetic MRI-like volume with exact labels.
///
/// Randomness comes from two xoshiro256** streams derived from `seed`:
/// "phantom.geometry" (object counts, sizes, placement, tissue intensities)
/// and "phantom.noise" (one normal draw per voxel in storage order). Every
/// labeled object is a single 6-connected component and objects never
/// overlap. Throws SpecInfeasible when a template cannot fit the dims or
/// placement fails after bounded retries.
std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec);

/// Number of 6-connected components among voxels carrying `label`.
std::size_t count_components_6(const LabelVolume& labels, std::uint16_t label);

}  // namespace samri
