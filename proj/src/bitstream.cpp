#include "smc/bitstream.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace smc {

namespace {

bool power_of_two(std::uint32_t n) { return n != 0 && (n & (n - 1)) == 0; }

class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}
    void put(std::uint32_t value, int bits) {
        for (int b = bits - 1; b >= 0; --b) {
            if (fill_ == 0) out_.push_back(0);
            if ((value >> b) & 1u) out_.back() |= static_cast<std::uint8_t>(0x80u >> fill_);
            fill_ = (fill_ + 1) % 8;
        }
    }

private:
    std::vector<std::uint8_t>& out_;
    int fill_ = 0;
};

class BitReader {
public:
    explicit BitReader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint32_t get(int bits) {
        std::uint32_t v = 0;
        for (int b = 0; b < bits; ++b, ++pos_) v = (v << 1) | ((in_[pos_ / 8] >> (7 - pos_ % 8)) & 1u);
        return v;
    }
    std::size_t position() const { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

void validate(const PacketHeader& h) {
    if (h.sample_rate != kSampleRate) throw FormatError("packet: sample rate must be 16000");
    if (h.stack < 1) throw FormatError("packet: stack factor must be >= 1");
    if (!power_of_two(h.semantic_vocab) || !power_of_two(h.acoustic_vocab))
        throw FormatError("packet: vocabulary sizes must be powers of two");
    const auto profile = window_profile(h.window_id);
    if (profile.patches % h.stack != 0) throw FormatError("packet: stack factor does not divide the window");
    if (h.token_pairs != expected_pairs(h.sample_count, h.stack, h.window_id))
        throw FormatError("packet: token pair count inconsistent with sample count");
}

}  // namespace

WindowProfile window_profile(std::uint16_t id) {
    switch (id) {
        case 0: return {0, 163840, 512};
        case 1: return {1, 40960, 128};
        default: throw FormatError("unknown window profile id " + std::to_string(id));
    }
}

WindowProfile window_profile_for_seconds(double window_s) {
    for (std::uint16_t id : {0, 1})
        if (std::abs(window_profile(id).seconds() - window_s) < 1e-9) return window_profile(id);
    throw ConfigError("window length must be 10.24 or 2.56 s");
}

int bits_for(std::uint32_t n) {
    if (n == 0) throw ConfigError("vocabulary size must be >= 1");
    int bits = 0;
    while ((std::uint64_t{1} << bits) < n) ++bits;
    return bits;
}

int PacketHeader::semantic_bits() const { return bits_for(semantic_vocab); }
int PacketHeader::acoustic_bits() const { return bits_for(acoustic_vocab); }

std::size_t PacketHeader::payload_bytes() const {
    const std::uint64_t bits = std::uint64_t{token_pairs} * static_cast<std::uint64_t>(semantic_bits() + acoustic_bits());
    return static_cast<std::size_t>((bits + 7) / 8);
}

std::uint32_t expected_pairs(std::uint64_t samples, int stack, std::uint16_t window_id) {
    const auto p = window_profile(window_id);
    if (stack < 1 || p.patches % stack != 0) throw ConfigError("stack factor must divide the window patch count");
    const std::uint64_t per_window = static_cast<std::uint64_t>(p.patches / stack);
    return static_cast<std::uint32_t>((samples * per_window + p.samples - 1) / p.samples);
}

CodecPacket pack(std::span<const int> semantic, std::span<const int> acoustic, const PacketHeader& header) {
    if (semantic.size() != header.token_pairs || acoustic.size() != header.token_pairs)
        throw EncodeError("pack: token count does not match header token_pairs");
    try {
        validate(header);
    } catch (const FormatError& e) {
        throw EncodeError(std::string("pack: ") + e.what());
    }
    const int sb = header.semantic_bits(), ab = header.acoustic_bits();
    CodecPacket p;
    p.header = header;
    p.payload.reserve(header.payload_bytes());
    BitWriter w(p.payload);
    for (std::size_t i = 0; i < semantic.size(); ++i) {
        if (semantic[i] < 0 || static_cast<std::uint32_t>(semantic[i]) >= header.semantic_vocab)
            throw EncodeError("pack: semantic token " + std::to_string(semantic[i]) + " out of range");
        if (acoustic[i] < 0 || static_cast<std::uint32_t>(acoustic[i]) >= header.acoustic_vocab)
            throw EncodeError("pack: acoustic token " + std::to_string(acoustic[i]) + " out of range");
        w.put(static_cast<std::uint32_t>(semantic[i]), sb);
        w.put(static_cast<std::uint32_t>(acoustic[i]), ab);
    }
    p.payload.resize(header.payload_bytes(), 0);
    return p;
}

std::vector<std::uint8_t> serialize_packet(const CodecPacket& packet) {
    const auto& h = packet.header;
    ByteWriter w;
    w.bytes("SMC1");
    w.u16(h.version);
    w.u32(h.sample_rate);
    w.u8(h.stack);
    w.u32(h.semantic_vocab);
    w.u32(h.acoustic_vocab);
    w.u32(h.token_pairs);
    w.u64(h.sample_count);
    w.u16(h.window_id);
    w.bytes(packet.payload);
    w.crc_trailer();
    return w.take();
}

DecodedPacket unpack(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw LengthError("packet: truncated before magic");
    if (std::string(bytes.begin(), bytes.begin() + 4) != "SMC1") throw FormatError("packet: bad magic");
    ByteReader r(bytes.subspan(4));
    DecodedPacket out;
    auto& h = out.header;
    h.version = r.u16();
    if (h.version != kPacketVersion) throw VersionError("packet: unsupported version " + std::to_string(h.version));
    r.require(kPacketHeaderBytes - 6);
    h.sample_rate = r.u32();
    h.stack = r.u8();
    h.semantic_vocab = r.u32();
    h.acoustic_vocab = r.u32();
    h.token_pairs = r.u32();
    h.sample_count = r.u64();
    h.window_id = r.u16();
    if (h.semantic_vocab == 0 || h.acoustic_vocab == 0) throw FormatError("packet: zero vocabulary size");
    if (bits_for(h.semantic_vocab) > 31 || bits_for(h.acoustic_vocab) > 31) throw FormatError("packet: vocabulary too large");
    const std::size_t payload = h.payload_bytes();
    if (bytes.size() != kPacketHeaderBytes + payload + 4)
        throw LengthError("packet: expected " + std::to_string(kPacketHeaderBytes + payload + 4) + " bytes, got " +
                          std::to_string(bytes.size()));
    verify_crc_trailer(bytes);
    validate(h);

    const auto body = bytes.subspan(kPacketHeaderBytes, payload);
    BitReader br(body);
    const int sb = h.semantic_bits(), ab = h.acoustic_bits();
    out.semantic.resize(h.token_pairs);
    out.acoustic.resize(h.token_pairs);
    for (std::uint32_t i = 0; i < h.token_pairs; ++i) {
        out.semantic[i] = static_cast<int>(br.get(sb));
        out.acoustic[i] = static_cast<int>(br.get(ab));
    }
    while (br.position() < payload * 8)
        if (br.get(1) != 0) throw CorruptionError("packet: non-zero padding bits");
    return out;
}

BitrateReport bitrate_report(const PacketHeader& header) {
    const auto p = window_profile(header.window_id);
    if (header.stack < 1 || p.patches % header.stack != 0) throw ConfigError("bitrate: invalid stack factor");
    BitrateReport r;
    // Integer numerators keep the reference rates exact in double.
    const double pair_num = static_cast<double>(p.patches / header.stack) * kSampleRate;
    const double window = static_cast<double>(p.samples);
    r.pairs_per_second = pair_num / window;
    r.tokens_per_second = 2.0 * pair_num / window;
    const double sem_bits = pair_num * header.semantic_bits() / window;
    const double ac_bits = pair_num * header.acoustic_bits() / window;
    r.kbps_semantic = sem_bits / 1000.0;
    r.kbps_acoustic = ac_bits / 1000.0;
    r.kbps_total = (sem_bits + ac_bits) / 1000.0;
    return r;
}

std::string format_kbps(double kbps) {
    char buf[64];
    for (int digits = 3; digits <= 17; ++digits) {
        std::snprintf(buf, sizeof buf, "%.*f", digits, kbps);
        if (std::strtod(buf, nullptr) == kbps) return buf;
    }
    return buf;
}

}  // namespace smc
