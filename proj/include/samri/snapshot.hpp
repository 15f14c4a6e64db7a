#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "samri/tensor.hpp"

namespace samri {

// Parameter snapshot file:
//   "SAMRIPS1"  u32 record_count
//   per record: u16 name_len, name, u8 rank, u32 dims[rank], f32le values
//   u64 XXH64 of every preceding byte

struct SnapshotRecord {
  std::string name;
  tensor::Shape shape;
  std::vector<float> values;
  bool operator==(const SnapshotRecord&) const = default;
};

std::vector<std::byte> encode_snapshot(const std::vector<SnapshotRecord>& records);
/// Throws BadMagic, TruncatedFile or ChecksumMismatch.
std::vector<SnapshotRecord> decode_snapshot(std::span<const std::byte> bytes);

/// Records for the parameters with the given frozen flag, in set order,
/// values rounded to f32.
std::vector<SnapshotRecord> snapshot_of(const tensor::ParameterSet& params, bool frozen = false);
/// Overwrites parameter values by name. Throws KeyNotFound for a missing
/// parameter and ShapeMismatch for a shape difference.
void load_snapshot(tensor::ParameterSet& params, const std::vector<SnapshotRecord>& records);

void write_snapshot_file(const std::filesystem::path& path, const std::vector<SnapshotRecord>& records);
std::vector<SnapshotRecord> read_snapshot_file(const std::filesystem::path& path);

}  // namespace samri
