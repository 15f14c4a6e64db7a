#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "samri/model.hpp"

namespace samri {

// Bank file layout (all integers little-endian):
//   header  "SAMRIEB1" u16 version u32 dim u32 grid_h u32 grid_w u64 count u8 dtype(1 = f32le)
//   record  u16 key_len, key, f32 embedding[grid_h*grid_w*dim], u64 XXH64(key || embedding)
//   footer  u64 count, (u16 key_len, key, u64 record_offset) * count, u64 footer_offset, "SAMRIEND"
// Records and footer entries are in lexicographic key order.

inline constexpr std::uint16_t kBankVersion = 1;
inline constexpr std::uint8_t kBankDtypeF32 = 1;

struct BankShape {
  std::uint32_t dim = 0;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::size_t floats() const { return std::size_t{dim} * grid_h * grid_w; }
  bool operator==(const BankShape&) const = default;
};

/// Read-only bank. Lookups use positioned reads, so concurrent lookups on
/// one instance are safe.
class EmbeddingBank {
 public:
  /// Reads header and footer index. Throws IoError, BadMagic, TruncatedFile.
  static EmbeddingBank open(const std::filesystem::path& path);
  EmbeddingBank(EmbeddingBank&&) noexcept;
  EmbeddingBank& operator=(EmbeddingBank&&) noexcept;
  ~EmbeddingBank();

  const BankShape& shape() const { return shape_; }
  std::size_t size() const { return index_.size(); }
  bool contains(const std::string& key) const;
  std::vector<std::string> keys() const;
  /// Binary search over the index. Throws KeyNotFound, ChecksumMismatch.
  ImageEmbedding lookup(const std::string& key) const;
  /// Re-reads and checks every record. Throws ChecksumMismatch.
  void verify_all() const;

 private:
  EmbeddingBank() = default;
  std::filesystem::path path_;
  int fd_ = -1;
  BankShape shape_;
  std::vector<std::pair<std::string, std::uint64_t>> index_;
};

/// Serializes a complete bank. `records` must be sorted by key and unique.
std::vector<std::byte> encode_bank(const BankShape& shape, const std::vector<ImageEmbedding>& records);

struct PrecomputeStats {
  std::size_t requested = 0;    // unique keys asked for
  std::size_t invocations = 0;  // encoder calls made by this run
  std::size_t reused = 0;       // records taken from an existing bank
  bool rewritten = false;
};

using EncodeFn = std::function<ImageEmbedding(const std::string& key)>;

/// Stage 1. Encodes each key absent from an existing bank at `path` exactly
/// once, then writes the union in key order through a temporary file and a
/// rename. An existing bank is verified first (ChecksumMismatch) and must
/// have the same shape (DimMismatch). A complete bank is left untouched.
PrecomputeStats precompute(const std::filesystem::path& path, std::vector<std::string> keys, const EncodeFn& encode,
                           const BankShape& shape);

// ---- cost model ----------------------------------------------------------------

/// Per-full-pass component times in seconds and the epoch count.
struct CostModel {
  double t_data = 0;
  double t_encoder = 0;
  double t_decoder = 0;
  double t_backward = 0;
  std::size_t epochs = 1;
  std::size_t encoder_invocations = 0;

  /// Throws InvalidArgument.
  void validate() const;
};

struct PredictedTimes {
  double total = 0;     // N (data + enc + dec + back)
  double pipeline = 0;  // data + enc + N (dec + back)
  double savings = 0;   // 1 - pipeline / total
};

PredictedTimes predicted_times(const CostModel& c);

}  // namespace samri
