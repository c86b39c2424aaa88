#pragma once

#include "smc/audio_io.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace smc {

enum class Domain : std::uint8_t { speech_like = 0, music_like = 1, general = 2 };

inline constexpr int kNumDomains = 3;
inline constexpr int kClassesPerDomain = 4;
inline constexpr int kNumClasses = kNumDomains * kClassesPerDomain;

std::string_view domain_name(Domain d);
Domain parse_domain(std::string_view name);

// Class labels 0..11; four recipes per domain.
//   speech_like: 0 vowel-a-low, 1 vowel-i-high, 2 vowel-u-mid, 3 diphthong-ai
//   music_like:  4 major-chord, 5 minor-chord, 6 arpeggio-up, 7 bass-plucks
//   general:     8 chirp-up, 9 chirp-down, 10 noise-bursts, 11 clicks
std::string_view class_name(int class_label);
Domain class_domain(int class_label);

struct ClipSpec {
    Domain domain = Domain::general;
    int class_label = 0;
    double duration_s = 2.56;
    std::uint64_t seed = 0;
};

struct LabeledClip {
    Waveform wave;
    Domain domain = Domain::general;
    int class_label = 0;
    std::uint64_t seed = 0;
};

// Deterministic in (domain, class_label, duration_s, seed); peak amplitude <= 1.
LabeledClip generate_clip(const ClipSpec& spec);

// Per-clip seed: master_seed XOR splitmix64((class_label << 32) | index).
std::uint64_t clip_seed(std::uint64_t master_seed, int class_label, int index);

// n_per_class clips for every template, ordered template-major then by index.
// Template seeds are ignored; each clip gets clip_seed(master_seed, label, i).
std::vector<LabeledClip> generate_corpus(int n_per_class, const std::vector<ClipSpec>& classes,
                                         std::uint64_t master_seed);

// One template per class, all twelve classes.
std::vector<ClipSpec> default_class_templates(double duration_s = 2.56);
// Templates for the four classes of one domain.
std::vector<ClipSpec> domain_class_templates(Domain d, double duration_s = 2.56);

// Writes clip_XXXXX.wav files plus manifest.tsv (path, domain, class_label).
void write_corpus(const std::string& dir, const std::vector<LabeledClip>& clips);

struct ManifestEntry {
    std::string path;
    Domain domain = Domain::general;
    int class_label = 0;
};
std::vector<ManifestEntry> read_manifest(const std::string& manifest_path);
// Loads every WAV listed in a manifest; relative paths resolve against the manifest's directory.
std::vector<LabeledClip> load_corpus(const std::string& manifest_path);

}  // namespace smc
