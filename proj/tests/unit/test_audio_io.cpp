#include "doctest.h"
#include "smc/audio_io.hpp"

#include <cmath>
#include <filesystem>
#include <limits>

using namespace smc;

namespace {

std::vector<std::uint8_t> wav_bytes(std::uint32_t rate, std::uint16_t channels, const std::vector<std::int16_t>& data) {
    ByteWriter w;
    const auto bytes = static_cast<std::uint32_t>(data.size() * 2);
    w.bytes("RIFF");
    w.u32(36 + bytes);
    w.bytes("WAVE");
    w.bytes("fmt ");
    w.u32(16);
    w.u16(1);
    w.u16(channels);
    w.u32(rate);
    w.u32(rate * 2 * channels);
    w.u16(static_cast<std::uint16_t>(2 * channels));
    w.u16(16);
    w.bytes("data");
    w.u32(bytes);
    for (auto s : data) w.u16(static_cast<std::uint16_t>(s));
    return w.take();
}

}  // namespace

TEST_CASE("read scales int16 by 1/32768") {
    const auto w = decode_wav(wav_bytes(16000, 1, {0, 16384, -32768}));
    REQUIRE(w.samples.size() == 3);
    CHECK(w.samples[0] == 0.0f);
    CHECK(w.samples[1] == 0.5f);
    CHECK(w.samples[2] == -1.0f);
}

TEST_CASE("unsupported inputs") {
    CHECK_THROWS_AS(decode_wav(wav_bytes(44100, 1, {1, 2})), FormatError);
    CHECK_THROWS_AS(decode_wav(wav_bytes(16000, 2, {1, 2})), FormatError);
    auto b = wav_bytes(16000, 1, {1, 2, 3});
    b.resize(30);
    CHECK_THROWS_AS(decode_wav(b), FormatError);
    CHECK_THROWS_AS(decode_wav(std::vector<std::uint8_t>{'R', 'I', 'F', 'X'}), FormatError);
}

TEST_CASE("write clamps and roundtrips within one step") {
    Waveform w;
    Rng rng(3);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (int i = 0; i < 4000; ++i) w.samples.push_back(u(rng));
    w.samples.push_back(1.5f);
    w.samples.push_back(-1.5f);
    const auto path = (std::filesystem::temp_directory_path() / "smc_audio_roundtrip.wav").string();
    write_wav(path, w);
    const auto r = read_wav(path);
    REQUIRE(r.samples.size() == w.samples.size());
    for (std::size_t i = 0; i + 2 < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0f / 32768);
    CHECK(r.samples[w.samples.size() - 2] == 32767.0f / 32768.0f);
    CHECK(r.samples.back() == -1.0f);
    std::filesystem::remove(path);
}

TEST_CASE("empty waveform writes a zero-length data chunk") {
    const auto bytes = encode_wav(Waveform{});
    CHECK(bytes.size() == 44);
    CHECK(decode_wav(bytes).samples.empty());
}

TEST_CASE("non-finite samples are rejected") {
    Waveform w;
    w.samples = {0.0f, std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(encode_wav(w), NumericError);
}
