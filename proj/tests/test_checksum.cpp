#include <doctest.h>

#include <string>
#include <vector>

#include "samri/bytes.hpp"
#include "samri/checksum.hpp"
#include "samri/rng.hpp"

using namespace samri;

TEST_SUITE("checksum") {
  // Reference digests from the xxHash reference implementation.
  TEST_CASE("xxh64 reference vectors") {
    CHECK(xxh64("") == 0xef46db3751d8e999ULL);
    CHECK(xxh64("abc") == 0x44bc2cf5ad770999ULL);
    CHECK(xxh64("The quick brown fox jumps over the lazy dog") == 0x0b242d361fda71bcULL);
    std::string seq;
    for (int i = 0; i < 100; ++i) seq.push_back(static_cast<char>(i));
    CHECK(xxh64(seq) == 0x6ac1e58032166597ULL);
    CHECK(xxh64(seq, 12345) == 0x028ba1ae2de4de27ULL);
  }

  TEST_CASE("streaming digest equals one-shot for every split point") {
    Xoshiro256 rng(3);
    std::vector<std::byte> data(257);
    for (auto& b : data) b = static_cast<std::byte>(rng.below(256));
    const auto whole = xxh64(data, 99);
    for (std::size_t cut = 0; cut <= data.size(); cut += 7) {
      Xxh64Stream s(99);
      s.update(std::span(data).first(cut));
      s.update(std::span(data).subspan(cut));
      CHECK(s.digest() == whole);
    }
  }

  TEST_CASE("byte writer and reader round trip little-endian") {
    ByteWriter w;
    w.u8(0xAB);
    w.u16(0x1234);
    w.u32(0xDEADBEEF);
    w.u64(0x0102030405060708ULL);
    w.f32(-1.5F);
    w.str("key");
    const auto bytes = w.take();
    REQUIRE(bytes.size() == 1 + 2 + 4 + 8 + 4 + 3);
    CHECK(bytes[1] == std::byte{0x34});
    CHECK(bytes[2] == std::byte{0x12});
    ByteReader r(bytes);
    CHECK(r.u8() == 0xAB);
    CHECK(r.u16() == 0x1234);
    CHECK(r.u32() == 0xDEADBEEF);
    CHECK(r.u64() == 0x0102030405060708ULL);
    CHECK(r.f32() == -1.5F);
    CHECK(r.str(3) == "key");
    CHECK(r.remaining() == 0);
    CHECK_THROWS(r.u8());
  }
}
