#pragma once

#include "smc/common.hpp"

#include <string>
#include <vector>

namespace smc {

// Mono waveform at the fixed codec rate of 16 kHz.
struct Waveform {
    std::vector<float> samples;
    int sample_rate_hz = kSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration_s() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

// Reads RIFF/WAVE PCM-16 mono at 16 kHz; samples are int16 / 32768.
Waveform read_wav(const std::string& path);
Waveform decode_wav(std::span<const std::uint8_t> bytes);

// Writes PCM-16 with int16 = clamp(round(clamp(x, -1, 1) * 32768), -32768, 32767).
void write_wav(const std::string& path, const Waveform& w);
std::vector<std::uint8_t> encode_wav(const Waveform& w);

}  // namespace smc
