#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "samri/grid.hpp"

namespace samri {

using Dims3 = std::array<std::size_t, 3>;

/// Scalar 3D grid. Voxels are stored x-fastest (the NIfTI on-disk order):
/// voxel (x, y, z) lives at x + dims[0] * (y + dims[1] * z).
struct Volume {
  Dims3 dims{0, 0, 0};
  std::vector<float> voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::string source;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  /// Throws unless voxel count matches dims and all values are finite.
  void validate() const;
};

/// Integer label grid paired with a Volume; 0 is background.
struct LabelVolume {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint16_t> labels;
  std::map<std::uint16_t, std::string> target_names;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  void validate() const;
};

namespace nifti {

enum class Datatype : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16 };

struct Header {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0F;
  float scl_slope = 0.0F;
  float scl_inter = 0.0F;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false;
};

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

struct Image {
  Header header;
  Volume volume;
};

/// Parses a single-file uncompressed NIfTI-1 (.nii) image, either byte order.
Image read(std::span<const std::byte> bytes);

/// Little-endian .nii with vox_offset 352. Integer datatypes round voxel
/// values half away from zero and throw ValueOutOfRange when they do not fit.
std::vector<std::byte> write(const Volume& volume, Datatype datatype = Datatype::Float32);

}  // namespace nifti

/// Converts an integer-valued volume (e.g. a label .nii) into a LabelVolume.
/// Names default to "target_<id>" for ids absent from `names`.
LabelVolume to_label_volume(const Volume& volume, const std::map<std::uint16_t, std::string>& names = {});
Volume to_volume(const LabelVolume& labels);

/// Native raw format: `<base>.svol.json` header plus `<base>.svol.bin` f32le blob.
namespace native {

std::string header_json(const Volume& volume);
std::vector<std::byte> payload(const Volume& volume);
Volume parse(const std::string& header_json, std::span<const std::byte> payload);

void write_files(const Volume& volume, const std::filesystem::path& base);
Volume read_files(const std::filesystem::path& base);

/// Single-stream form used for uploads: the header JSON on one line,
/// a '\n', then the f32le payload.
std::vector<std::byte> bundle(const Volume& volume);
Volume parse_bundle(std::span<const std::byte> bytes);

}  // namespace native

/// Sniffs the format (NIfTI vs native bundle) and parses.
Volume read_volume_bytes(std::span<const std::byte> bytes);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

// ---- slicing ---------------------------------------------------------------

/// Axis with the smallest extent; ties go to the lowest axis index.
int slicing_axis(const Dims3& dims);

/// For slicing axis a, the in-plane axes are the remaining two in increasing
/// order; the first becomes the image column (x), the second the row (y).
std::array<int, 2> in_plane_axes(int axis);

struct SliceRecord {
  Grid2<float> image;
  Grid2<std::uint16_t> labels;
  int axis = 2;
  std::size_t index = 0;
};

Grid2<float> extract_image_slice(const Volume& volume, int axis, std::size_t index);
Grid2<std::uint16_t> extract_label_slice(const LabelVolume& labels, int axis, std::size_t index);

/// All slices along slicing_axis(), ordered by index. Throws DimMismatch.
std::vector<SliceRecord> extract_slices(const Volume& volume, const LabelVolume& labels);

/// Inverse of extract_slices (images only); used to check reassembly.
Volume assemble_slices(const std::vector<SliceRecord>& slices, const Dims3& dims);

}  // namespace samri
