#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace samri {

/// XXH64 (xxHash, 64-bit variant).
std::uint64_t xxh64(std::span<const std::byte> data, std::uint64_t seed = 0) noexcept;

inline std::uint64_t xxh64(std::string_view s, std::uint64_t seed = 0) noexcept {
  return xxh64(std::as_bytes(std::span(s.data(), s.size())), seed);
}

/// Streaming form for checksums over several buffers.
class Xxh64Stream {
 public:
  explicit Xxh64Stream(std::uint64_t seed = 0) noexcept;
  void update(std::span<const std::byte> data) noexcept;
  std::uint64_t digest() const noexcept;

 private:
  std::uint64_t v_[4];
  std::uint64_t seed_;
  std::uint64_t total_ = 0;
  std::byte buf_[32]{};
  std::size_t buffered_ = 0;
};

}  // namespace samri
