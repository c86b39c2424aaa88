#include "doctest.h"
#include "smc/common.hpp"

#include <atomic>
#include <cstdlib>

using namespace smc;

TEST_CASE("crc32 check value") {
    const std::string s = "123456789";
    CHECK(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())) == 0xCBF43926u);
    CHECK(crc32({}) == 0u);
}

TEST_CASE("byte writer and reader roundtrip") {
    ByteWriter w;
    w.bytes("ABCD");
    w.u8(7);
    w.u16(0xBEEF);
    w.u32(0xDEADBEEFu);
    w.u64(0x0123456789ABCDEFull);
    w.f32(-1.25f);
    w.crc_trailer();
    const auto bytes = w.take();
    CHECK(bytes.size() == 4 + 1 + 2 + 4 + 8 + 4 + 4);
    CHECK(bytes[5] == 0xEF);  // little-endian

    const auto body = verify_crc_trailer(bytes);
    ByteReader r(body);
    CHECK(r.str(4) == "ABCD");
    CHECK(r.u8() == 7);
    CHECK(r.u16() == 0xBEEF);
    CHECK(r.u32() == 0xDEADBEEFu);
    CHECK(r.u64() == 0x0123456789ABCDEFull);
    CHECK(r.f32() == -1.25f);
    CHECK(r.remaining() == 0);
    CHECK_THROWS_AS(r.u8(), LengthError);

    auto bad = bytes;
    bad[3] ^= 0x10;
    CHECK_THROWS_AS(verify_crc_trailer(bad), CorruptionError);
    CHECK_THROWS_AS(verify_crc_trailer(std::span(bytes).first(3)), LengthError);
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
    setenv("SMC_THREADS", "3", 1);
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                        if (i == 7) throw ShapeError("boom");
                    }),
                    ShapeError);
    unsetenv("SMC_THREADS");
    CHECK(worker_count() == 1);
}
