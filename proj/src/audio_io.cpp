#include "smc/audio_io.hpp"

#include <algorithm>
#include <cmath>

namespace smc {

namespace {

constexpr std::uint16_t kPcmFormat = 1;

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    try {
        if (r.str(4) != "RIFF") throw FormatError("wav: missing RIFF tag");
        r.u32();
        if (r.str(4) != "WAVE") throw FormatError("wav: missing WAVE tag");

        bool have_fmt = false;
        std::uint16_t channels = 0;
        std::uint16_t bits = 0;
        std::uint32_t rate = 0;
        while (true) {
            const std::string id = r.str(4);
            const std::uint32_t size = r.u32();
            if (id == "fmt ") {
                if (size < 16) throw FormatError("wav: short fmt chunk");
                r.require(size);
                const std::uint16_t format = r.u16();
                channels = r.u16();
                rate = r.u32();
                r.u32();  // byte rate
                r.u16();  // block align
                bits = r.u16();
                r.str(size - 16 + (size & 1u));
                if (format != kPcmFormat || bits != 16) throw FormatError("wav: only PCM-16 is supported");
                have_fmt = true;
            } else if (id == "data") {
                if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
                if (channels != 1) throw FormatError("wav: unsupported layout, expected mono");
                if (rate != static_cast<std::uint32_t>(kSampleRate))
                    throw FormatError("wav: unsupported rate " + std::to_string(rate) + " Hz, expected 16000");
                if (size % 2 != 0) throw FormatError("wav: odd data size");
                r.require(size);
                Waveform w;
                w.samples.resize(size / 2);
                for (auto& s : w.samples) s = static_cast<float>(static_cast<std::int16_t>(r.u16())) / 32768.0f;
                return w;
            } else {
                r.require(size + (size & 1u));
                r.str(size + (size & 1u));
            }
        }
    } catch (const LengthError&) {
        throw FormatError("wav: truncated file");
    }
}

Waveform read_wav(const std::string& path) { return decode_wav(read_file(path)); }

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
    const auto data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
    ByteWriter out;
    out.bytes("RIFF");
    out.u32(36 + data_size);
    out.bytes("WAVE");
    out.bytes("fmt ");
    out.u32(16);
    out.u16(kPcmFormat);
    out.u16(1);
    out.u32(kSampleRate);
    out.u32(kSampleRate * 2);
    out.u16(2);
    out.u16(16);
    out.bytes("data");
    out.u32(data_size);
    for (float s : w.samples) {
        if (!std::isfinite(s)) throw NumericError("wav: non-finite sample");
        const double q = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
        out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
    }
    return out.take();
}

void write_wav(const std::string& path, const Waveform& w) { write_file(path, encode_wav(w)); }

}  // namespace smc
