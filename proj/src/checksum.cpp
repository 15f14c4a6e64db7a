#include "samri/checksum.hpp"
#include "samri/error.hpp"

#include <cstring>

namespace samri {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::UnsupportedDim: return "UnsupportedDim";
    case ErrorCode::CompressedNotSupported: return "CompressedNotSupported";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::SpecInfeasible: return "SpecInfeasible";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::EmptySurface: return "EmptySurface";
    case ErrorCode::AllZeroDifferences: return "AllZeroDifferences";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::KeyNotFound: return "KeyNotFound";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::BankMissing: return "BankMissing";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace {

constexpr std::uint64_t P1 = 0x9E3779B185EBCA87ULL;
constexpr std::uint64_t P2 = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t P3 = 0x165667B19E3779F9ULL;
constexpr std::uint64_t P4 = 0x85EBCA77C2B2AE63ULL;
constexpr std::uint64_t P5 = 0x27D4EB2F165667C5ULL;

constexpr std::uint64_t rotl(std::uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

std::uint64_t read64(const std::byte* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint64_t>(p[i]);
  return v;
}

std::uint32_t read32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint32_t>(p[i]);
  return v;
}

std::uint64_t xround(std::uint64_t acc, std::uint64_t input) {
  acc += input * P2;
  acc = rotl(acc, 31);
  return acc * P1;
}

std::uint64_t merge(std::uint64_t acc, std::uint64_t val) {
  acc ^= xround(0, val);
  return acc * P1 + P4;
}

std::uint64_t finish(std::uint64_t h, const std::byte* p, std::size_t len) {
  while (len >= 8) {
    h ^= xround(0, read64(p));
    h = rotl(h, 27) * P1 + P4;
    p += 8;
    len -= 8;
  }
  if (len >= 4) {
    h ^= static_cast<std::uint64_t>(read32(p)) * P1;
    h = rotl(h, 23) * P2 + P3;
    p += 4;
    len -= 4;
  }
  while (len > 0) {
    h ^= static_cast<std::uint64_t>(*p) * P5;
    h = rotl(h, 11) * P1;
    ++p;
    --len;
  }
  h ^= h >> 33;
  h *= P2;
  h ^= h >> 29;
  h *= P3;
  h ^= h >> 32;
  return h;
}

}  // namespace

Xxh64Stream::Xxh64Stream(std::uint64_t seed) noexcept
    : v_{seed + P1 + P2, seed + P2, seed, seed - P1}, seed_(seed) {}

void Xxh64Stream::update(std::span<const std::byte> data) noexcept {
  const std::byte* p = data.data();
  std::size_t len = data.size();
  total_ += len;
  if (buffered_ + len < 32) {
    std::memcpy(buf_ + buffered_, p, len);
    buffered_ += len;
    return;
  }
  if (buffered_ > 0) {
    const std::size_t fill = 32 - buffered_;
    std::memcpy(buf_ + buffered_, p, fill);
    for (int i = 0; i < 4; ++i) v_[i] = xround(v_[i], read64(buf_ + 8 * i));
    p += fill;
    len -= fill;
    buffered_ = 0;
  }
  while (len >= 32) {
    for (int i = 0; i < 4; ++i) v_[i] = xround(v_[i], read64(p + 8 * i));
    p += 32;
    len -= 32;
  }
  std::memcpy(buf_, p, len);
  buffered_ = len;
}

std::uint64_t Xxh64Stream::digest() const noexcept {
  std::uint64_t h;
  if (total_ >= 32) {
    h = rotl(v_[0], 1) + rotl(v_[1], 7) + rotl(v_[2], 12) + rotl(v_[3], 18);
    for (int i = 0; i < 4; ++i) h = merge(h, v_[i]);
  } else {
    h = seed_ + P5;
  }
  h += total_;
  return finish(h, buf_, buffered_);
}

std::uint64_t xxh64(std::span<const std::byte> data, std::uint64_t seed) noexcept {
  Xxh64Stream s(seed);
  s.update(data);
  return s.digest();
}

}  // namespace samri
