#include "samri/snapshot.hpp"

#include <limits>

#include "samri/bytes.hpp"
#include "samri/checksum.hpp"
#include "samri/data_io.hpp"
#include "samri/error.hpp"

namespace samri {

namespace {
constexpr std::string_view kMagic = "SAMRIPS1";
}

std::vector<std::byte> encode_snapshot(const std::vector<SnapshotRecord>& records) {
  ByteWriter w;
  w.str(kMagic);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw Error(ErrorCode::InvalidArgument, "parameter name too long: " + r.name.substr(0, 32));
    if (tensor::numel(r.shape) != r.values.size())
      throw Error(ErrorCode::ShapeMismatch, r.name + ": " + std::to_string(r.values.size()) + " values for " +
                                                tensor::shape_str(r.shape));
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.str(r.name);
    w.u8(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : r.values) w.f32(v);
  }
  const auto sum = xxh64(std::span(w.data()));
  w.u64(sum);
  return w.take();
}

std::vector<SnapshotRecord> decode_snapshot(std::span<const std::byte> bytes) {
  if (bytes.size() < kMagic.size() + 12) throw Error(ErrorCode::TruncatedFile, "snapshot shorter than header");
  ByteReader r(bytes);
  if (r.str(kMagic.size()) != kMagic) throw Error(ErrorCode::BadMagic, "not a parameter snapshot");
  ByteReader tail(bytes.subspan(bytes.size() - 8));
  if (xxh64(bytes.first(bytes.size() - 8)) != tail.u64())
    throw Error(ErrorCode::ChecksumMismatch, "snapshot checksum does not match contents");
  const auto count = r.u32();
  std::vector<SnapshotRecord> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SnapshotRecord rec;
    rec.name = r.str(r.u16());
    const auto rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) rec.shape.push_back(r.u32());
    const auto n = tensor::numel(rec.shape);
    if (n * 4 > r.remaining()) throw Error(ErrorCode::TruncatedFile, "snapshot record " + rec.name);
    rec.values.resize(n);
    for (auto& v : rec.values) v = r.f32();
    out.push_back(std::move(rec));
  }
  if (r.remaining() != 8) throw Error(ErrorCode::TruncatedFile, "trailing bytes in snapshot");
  return out;
}

std::vector<SnapshotRecord> snapshot_of(const tensor::ParameterSet& params, bool frozen) {
  std::vector<SnapshotRecord> out;
  for (const auto& p : params.items()) {
    if (p.frozen != frozen) continue;
    SnapshotRecord r{p.name, p.tensor.shape(), {}};
    r.values.reserve(p.tensor.numel());
    for (double v : p.tensor.values()) r.values.push_back(static_cast<float>(v));
    out.push_back(std::move(r));
  }
  return out;
}

void load_snapshot(tensor::ParameterSet& params, const std::vector<SnapshotRecord>& records) {
  for (const auto& r : records) {
    auto* p = params.find(r.name);
    if (!p) throw Error(ErrorCode::KeyNotFound, "snapshot parameter not in model: " + r.name);
    if (p->tensor.shape() != r.shape)
      throw Error(ErrorCode::ShapeMismatch,
                  r.name + ": " + tensor::shape_str(p->tensor.shape()) + " vs " + tensor::shape_str(r.shape));
    auto vals = p->tensor.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = r.values[i];
  }
}

void write_snapshot_file(const std::filesystem::path& path, const std::vector<SnapshotRecord>& records) {
  write_file_bytes(path, encode_snapshot(records));
}

std::vector<SnapshotRecord> read_snapshot_file(const std::filesystem::path& path) {
  return decode_snapshot(read_file_bytes(path));
}

}  // namespace samri
