#pragma once

#include "smc/common.hpp"

#include <string>
#include <vector>

namespace smc {

class EncodeError : public Error {
    using Error::Error;
};

inline constexpr std::uint16_t kPacketVersion = 1;
inline constexpr std::size_t kPacketHeaderBytes = 33;

// Analysis window profiles: id 0 = 10.24 s (512 patches), id 1 = 2.56 s (128 patches).
struct WindowProfile {
    std::uint16_t id;
    std::size_t samples;
    int patches;
    double seconds() const { return static_cast<double>(samples) / kSampleRate; }
};
WindowProfile window_profile(std::uint16_t id);
WindowProfile window_profile_for_seconds(double window_s);

struct PacketHeader {
    std::uint16_t version = kPacketVersion;
    std::uint32_t sample_rate = kSampleRate;
    std::uint8_t stack = 1;
    std::uint32_t semantic_vocab = 2;
    std::uint32_t acoustic_vocab = 2;
    std::uint32_t token_pairs = 0;
    std::uint64_t sample_count = 0;
    std::uint16_t window_id = 0;

    int semantic_bits() const;
    int acoustic_bits() const;
    std::size_t payload_bytes() const;
};

struct CodecPacket {
    PacketHeader header;
    std::vector<std::uint8_t> payload;
};

struct DecodedPacket {
    PacketHeader header;
    std::vector<int> semantic;
    std::vector<int> acoustic;
};

// ceil(log2 n); 0 for n = 1.
int bits_for(std::uint32_t n);

// Pairs kept for a clip: ceil(samples * (patches/K) / window_samples).
std::uint32_t expected_pairs(std::uint64_t samples, int stack, std::uint16_t window_id);

// Pairwise interleaved fixed-width fields, MSB first, zero padded to a byte.
CodecPacket pack(std::span<const int> semantic, std::span<const int> acoustic, const PacketHeader& header);
// Header, payload, CRC32 over both.
std::vector<std::uint8_t> serialize_packet(const CodecPacket& packet);
// Checks magic, version, length, then CRC.
DecodedPacket unpack(std::span<const std::uint8_t> bytes);

struct BitrateReport {
    double pairs_per_second = 0;
    double tokens_per_second = 0;
    double kbps_semantic = 0;
    double kbps_acoustic = 0;
    double kbps_total = 0;
};

BitrateReport bitrate_report(const PacketHeader& header);

// Fixed-point rendering with at least three decimals, more only when needed
// to round-trip (1.4 -> "1.400", 0.3125 -> "0.3125").
std::string format_kbps(double kbps);

}  // namespace smc
