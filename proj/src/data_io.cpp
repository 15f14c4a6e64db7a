#include "samri/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "samri/error.hpp"

namespace samri {

namespace {

std::string dims_str(const Dims3& d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")";
}

class ByteReader {
 public:
  ByteReader(std::span<const std::byte> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <class T>
  T get(std::size_t offset) const {
    std::array<std::byte, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }

 private:
  std::span<const std::byte> bytes_;
  bool swap_;
};

template <class T>
void put_le(std::vector<std::byte>& out, std::size_t offset, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  std::memcpy(out.data() + offset, &v, sizeof(T));
}

std::int32_t byteswap32(std::int32_t v) {
  auto u = static_cast<std::uint32_t>(v);
  u = (u >> 24) | ((u >> 8) & 0xFF00U) | ((u << 8) & 0xFF0000U) | (u << 24);
  return static_cast<std::int32_t>(u);
}

}  // namespace

void Volume::validate() const {
  if (voxels.size() != voxel_count())
    throw Error(ErrorCode::DimMismatch, "voxel count " + std::to_string(voxels.size()) + " != dims " + dims_str(dims));
  for (float v : voxels)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "volume contains a non-finite voxel");
}

void LabelVolume::validate() const {
  if (labels.size() != dims[0] * dims[1] * dims[2])
    throw Error(ErrorCode::DimMismatch, "label count does not match dims " + dims_str(dims));
  for (auto l : labels)
    if (l != 0 && !target_names.contains(l))
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(l) + " has no target name");
}

namespace nifti {

Image read(std::span<const std::byte> bytes) {
  if (bytes.size() >= 2 && bytes[0] == std::byte{0x1F} && bytes[1] == std::byte{0x8B})
    throw Error(ErrorCode::CompressedNotSupported, "gzip-compressed NIfTI is not supported");
  if (bytes.size() < kVoxOffset)
    throw Error(ErrorCode::TruncatedFile, "need at least 352 bytes, got " + std::to_string(bytes.size()));

  std::int32_t raw_size;
  std::memcpy(&raw_size, bytes.data(), 4);
  bool swap = false;
  if (raw_size != 348) {
    if (byteswap32(raw_size) != 348)
      throw Error(ErrorCode::BadMagic, "sizeof_hdr is neither 348 nor its byte-swapped form");
    swap = true;
  }
  const ByteReader r(bytes, swap);

  Image img;
  Header& h = img.header;
  h.big_endian = swap;
  h.sizeof_hdr = 348;
  for (int i = 0; i < 8; ++i) h.dim[i] = r.get<std::int16_t>(40 + 2 * i);
  h.datatype = r.get<std::int16_t>(70);
  h.bitpix = r.get<std::int16_t>(72);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = r.get<float>(76 + 4 * i);
  h.vox_offset = r.get<float>(108);
  h.scl_slope = r.get<float>(112);
  h.scl_inter = r.get<float>(116);
  std::memcpy(h.magic.data(), bytes.data() + 344, 4);

  if (!(h.magic[0] == 'n' && h.magic[1] == '+' && h.magic[2] == '1' && h.magic[3] == '\0'))
    throw Error(ErrorCode::BadMagic, "magic is not \"n+1\\0\"");

  std::size_t elem = 0;
  switch (h.datatype) {
    case 2: elem = 1; break;
    case 4: elem = 2; break;
    case 16: elem = 4; break;
    default:
      throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
  }
  if (h.dim[0] < 1 || h.dim[0] > 3) throw Error(ErrorCode::UnsupportedDim, "dim[0] = " + std::to_string(h.dim[0]));
  if (!std::isfinite(h.vox_offset) || h.vox_offset < static_cast<float>(kVoxOffset))
    throw Error(ErrorCode::BadMagic, "vox_offset below 352");

  Volume& v = img.volume;
  for (int a = 0; a < 3; ++a) {
    const int d = a < h.dim[0] ? h.dim[a + 1] : 1;
    if (d < 1) throw Error(ErrorCode::UnsupportedDim, "non-positive extent on axis " + std::to_string(a));
    v.dims[a] = static_cast<std::size_t>(d);
    const float px = h.pixdim[a + 1];
    v.spacing[a] = (std::isfinite(px) && px > 0.0F) ? px : 1.0;
  }

  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t n = v.voxel_count();
  if (bytes.size() < offset + n * elem)
    throw Error(ErrorCode::TruncatedFile, "voxel data needs " + std::to_string(offset + n * elem) + " bytes, have " +
                                              std::to_string(bytes.size()));

  const bool scale = h.scl_slope != 0.0F && std::isfinite(h.scl_slope);
  const double slope = scale ? h.scl_slope : 1.0;
  const double inter = scale && std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;

  v.voxels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = offset + i * elem;
    double val = 0.0;
    switch (h.datatype) {
      case 2: val = static_cast<double>(std::to_integer<std::uint8_t>(bytes[at])); break;
      case 4: val = r.get<std::int16_t>(at); break;
      case 16: {
        const float f = r.get<float>(at);
        if (!scale) {
          v.voxels[i] = f;
          continue;
        }
        val = f;
        break;
      }
    }
    v.voxels[i] = static_cast<float>(val * slope + inter);
  }
  v.source = "nifti";
  v.validate();
  return img;
}

std::vector<std::byte> write(const Volume& volume, Datatype datatype) {
  volume.validate();
  std::size_t elem = 4;
  std::int16_t bitpix = 32;
  double lo = 0, hi = 0;
  switch (datatype) {
    case Datatype::UInt8: elem = 1; bitpix = 8; lo = 0; hi = 255; break;
    case Datatype::Int16: elem = 2; bitpix = 16; lo = -32768; hi = 32767; break;
    case Datatype::Float32: break;
    default: throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(static_cast<int>(datatype)));
  }
  for (std::size_t a = 0; a < 3; ++a)
    if (volume.dims[a] > 32767) throw Error(ErrorCode::UnsupportedDim, "extent exceeds NIfTI-1 short range");

  const std::size_t n = volume.voxel_count();
  std::vector<std::byte> out(kVoxOffset + n * elem, std::byte{0});
  put_le<std::int32_t>(out, 0, 348);
  const std::array<std::int16_t, 8> dim{3,
                                        static_cast<std::int16_t>(volume.dims[0]),
                                        static_cast<std::int16_t>(volume.dims[1]),
                                        static_cast<std::int16_t>(volume.dims[2]),
                                        1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_le<std::int16_t>(out, 40 + 2 * i, dim[i]);
  put_le<std::int16_t>(out, 70, static_cast<std::int16_t>(datatype));
  put_le<std::int16_t>(out, 72, bitpix);
  const std::array<float, 8> pixdim{1.0F,
                                    static_cast<float>(volume.spacing[0]),
                                    static_cast<float>(volume.spacing[1]),
                                    static_cast<float>(volume.spacing[2]),
                                    0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) put_le<float>(out, 76 + 4 * i, pixdim[i]);
  put_le<float>(out, 108, static_cast<float>(kVoxOffset));
  put_le<float>(out, 112, 0.0F);
  put_le<float>(out, 116, 0.0F);
  out[123] = std::byte{2};  // xyzt_units: mm
  const char magic[4] = {'n', '+', '1', '\0'};
  std::memcpy(out.data() + 344, magic, 4);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = kVoxOffset + i * elem;
    if (datatype == Datatype::Float32) {
      put_le<float>(out, at, volume.voxels[i]);
      continue;
    }
    const double rounded = std::round(static_cast<double>(volume.voxels[i]));
    if (rounded < lo || rounded > hi)
      throw Error(ErrorCode::ValueOutOfRange,
                  "voxel " + std::to_string(i) + " value " + std::to_string(volume.voxels[i]) + " does not fit datatype");
    if (datatype == Datatype::UInt8)
      out[at] = static_cast<std::byte>(static_cast<std::uint8_t>(rounded));
    else
      put_le<std::int16_t>(out, at, static_cast<std::int16_t>(rounded));
  }
  return out;
}

}  // namespace nifti

LabelVolume to_label_volume(const Volume& volume, const std::map<std::uint16_t, std::string>& names) {
  volume.validate();
  LabelVolume lv;
  lv.dims = volume.dims;
  lv.labels.resize(volume.voxels.size());
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    const float v = volume.voxels[i];
    if (v < 0.0F || v != std::floor(v) || v > 65535.0F)
      throw Error(ErrorCode::ValueOutOfRange, "label voxels must be non-negative integers");
    const auto l = static_cast<std::uint16_t>(v);
    lv.labels[i] = l;
    if (l != 0 && !lv.target_names.contains(l)) {
      auto it = names.find(l);
      lv.target_names[l] = it != names.end() ? it->second : "target_" + std::to_string(l);
    }
  }
  return lv;
}

Volume to_volume(const LabelVolume& labels) {
  Volume v;
  v.dims = labels.dims;
  v.voxels.assign(labels.labels.begin(), labels.labels.end());
  v.source = "labels";
  return v;
}

namespace native {

std::string header_json(const Volume& volume) {
  nlohmann::ordered_json j;
  j["dims"] = volume.dims;
  j["spacing"] = volume.spacing;
  j["dtype"] = "f32le";
  j["source"] = volume.source;
  return j.dump();
}

std::vector<std::byte> payload(const Volume& volume) {
  std::vector<std::byte> out(volume.voxels.size() * 4);
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) put_le<float>(out, 4 * i, volume.voxels[i]);
  return out;
}

Volume parse(const std::string& header, std::span<const std::byte> data) {
  auto j = nlohmann::json::parse(header, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("dims"))
    throw Error(ErrorCode::BadMagic, "native header is not a JSON object with dims");
  if (j.value("dtype", std::string{}) != "f32le")
    throw Error(ErrorCode::UnsupportedDatatype, "native dtype must be f32le");
  Volume v;
  const auto dims = j.at("dims");
  if (!dims.is_array() || dims.size() != 3) throw Error(ErrorCode::UnsupportedDim, "dims must have 3 entries");
  for (int a = 0; a < 3; ++a) {
    const auto d = dims[a].get<long long>();
    if (d < 1) throw Error(ErrorCode::UnsupportedDim, "non-positive extent");
    v.dims[a] = static_cast<std::size_t>(d);
  }
  if (j.contains("spacing"))
    for (int a = 0; a < 3; ++a) v.spacing[a] = j["spacing"][a].get<double>();
  v.source = j.value("source", std::string{"native"});
  const std::size_t n = v.voxel_count();
  if (data.size() < n * 4) throw Error(ErrorCode::TruncatedFile, "native payload shorter than dims imply");
  v.voxels.resize(n);
  for (std::size_t i = 0; i < n; ++i) std::memcpy(&v.voxels[i], data.data() + 4 * i, 4);
  v.validate();
  return v;
}

void write_files(const Volume& volume, const std::filesystem::path& base) {
  const auto h = header_json(volume);
  write_file_bytes(base.string() + ".svol.json", std::as_bytes(std::span(h.data(), h.size())));
  write_file_bytes(base.string() + ".svol.bin", payload(volume));
}

Volume read_files(const std::filesystem::path& base) {
  const auto h = read_file_bytes(base.string() + ".svol.json");
  const auto b = read_file_bytes(base.string() + ".svol.bin");
  return parse(std::string(reinterpret_cast<const char*>(h.data()), h.size()), b);
}

std::vector<std::byte> bundle(const Volume& volume) {
  const auto h = header_json(volume);
  std::vector<std::byte> out(h.size() + 1);
  std::memcpy(out.data(), h.data(), h.size());
  out[h.size()] = std::byte{'\n'};
  const auto p = payload(volume);
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

Volume parse_bundle(std::span<const std::byte> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), std::byte{'\n'});
  if (nl == bytes.end()) throw Error(ErrorCode::TruncatedFile, "native bundle has no header terminator");
  const auto hlen = static_cast<std::size_t>(nl - bytes.begin());
  return parse(std::string(reinterpret_cast<const char*>(bytes.data()), hlen), bytes.subspan(hlen + 1));
}

}  // namespace native

Volume read_volume_bytes(std::span<const std::byte> bytes) {
  if (!bytes.empty() && bytes[0] == std::byte{'{'}) return native::parse_bundle(bytes);
  return nifti::read(bytes).volume;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> out(size);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::IoError, "short read on " + path.string());
  return out;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write on " + path.string());
}

// ---- slicing ---------------------------------------------------------------

int slicing_axis(const Dims3& dims) {
  int best = 0;
  for (int a = 1; a < 3; ++a)
    if (dims[a] < dims[best]) best = a;
  return best;
}

std::array<int, 2> in_plane_axes(int axis) {
  switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
  }
}

namespace {

template <class T, class Src>
Grid2<T> slice_of(const Src& values, const Dims3& dims, int axis, std::size_t index) {
  if (axis < 0 || axis > 2 || index >= dims[axis])
    throw Error(ErrorCode::OutOfBounds, "slice " + std::to_string(index) + " on axis " + std::to_string(axis));
  const auto [col_axis, row_axis] = in_plane_axes(axis);
  Grid2<T> g(dims[row_axis], dims[col_axis]);
  std::array<std::size_t, 3> p{};
  p[axis] = index;
  for (std::size_t y = 0; y < g.height; ++y) {
    p[row_axis] = y;
    for (std::size_t x = 0; x < g.width; ++x) {
      p[col_axis] = x;
      g.at(y, x) = values[p[0] + dims[0] * (p[1] + dims[1] * p[2])];
    }
  }
  return g;
}

}  // namespace

Grid2<float> extract_image_slice(const Volume& volume, int axis, std::size_t index) {
  return slice_of<float>(volume.voxels, volume.dims, axis, index);
}

Grid2<std::uint16_t> extract_label_slice(const LabelVolume& labels, int axis, std::size_t index) {
  return slice_of<std::uint16_t>(labels.labels, labels.dims, axis, index);
}

std::vector<SliceRecord> extract_slices(const Volume& volume, const LabelVolume& labels) {
  if (volume.dims != labels.dims)
    throw Error(ErrorCode::DimMismatch, "volume " + dims_str(volume.dims) + " vs labels " + dims_str(labels.dims));
  const int axis = slicing_axis(volume.dims);
  std::vector<SliceRecord> out;
  out.reserve(volume.dims[axis]);
  for (std::size_t k = 0; k < volume.dims[axis]; ++k)
    out.push_back({extract_image_slice(volume, axis, k), extract_label_slice(labels, axis, k), axis, k});
  return out;
}

Volume assemble_slices(const std::vector<SliceRecord>& slices, const Dims3& dims) {
  Volume v;
  v.dims = dims;
  v.voxels.assign(v.voxel_count(), 0.0F);
  for (const auto& s : slices) {
    const auto [col_axis, row_axis] = in_plane_axes(s.axis);
    std::array<std::size_t, 3> p{};
    p[s.axis] = s.index;
    for (std::size_t y = 0; y < s.image.height; ++y) {
      p[row_axis] = y;
      for (std::size_t x = 0; x < s.image.width; ++x) {
        p[col_axis] = x;
        v.voxels[v.index(p[0], p[1], p[2])] = s.image.at(y, x);
      }
    }
  }
  return v;
}

}  // namespace samri
