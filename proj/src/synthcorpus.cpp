#include "smc/synthcorpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace smc {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "vowel-a-low", "vowel-i-high", "vowel-u-mid", "diphthong-ai",
    "major-chord", "minor-chord",  "arpeggio-up", "bass-plucks",
    "chirp-up",    "chirp-down",   "noise-bursts", "clicks"};

struct Formants {
    double f1, f2, f3;
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double log_uniform(Rng& rng, double lo, double hi) { return std::exp(uniform(rng, std::log(lo), std::log(hi))); }

// Two-pole resonator with unit peak gain, coefficients recomputed per sample so
// formant centres may glide.
class Resonator {
public:
    double step(double x, double freq, double bandwidth) {
        const double r = std::exp(-std::numbers::pi * bandwidth / kSampleRate);
        const double theta = kTwoPi * freq / kSampleRate;
        const double gain = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
        const double y = gain * x + 2.0 * r * std::cos(theta) * y1_ - r * r * y2_;
        y2_ = y1_;
        y1_ = y;
        return y;
    }

private:
    double y1_ = 0.0;
    double y2_ = 0.0;
};

void speech_like(std::vector<double>& out, int label, Rng& rng) {
    static constexpr Formants kA{730, 1090, 2440};
    static constexpr Formants kI{270, 2290, 3010};
    static constexpr Formants kU{300, 870, 2240};
    double f0 = 0;
    Formants from{}, to{};
    switch (label) {
        case 0: f0 = uniform(rng, 100, 125); from = to = kA; break;
        case 1: f0 = uniform(rng, 200, 240); from = to = kI; break;
        case 2: f0 = uniform(rng, 145, 175); from = to = kU; break;
        default: f0 = uniform(rng, 125, 155); from = kA; to = kI; break;
    }
    const double jitter = uniform(rng, 0.97, 1.03);
    auto scale = [&](Formants f) { return Formants{f.f1 * jitter, f.f2 * jitter, f.f3 * jitter}; };
    from = scale(from);
    to = scale(to);
    const double syllable_rate = uniform(rng, 3.0, 5.0);
    const double vib_rate = uniform(rng, 4.0, 6.0);
    const double phase = uniform(rng, 0, kTwoPi);
    const auto n = out.size();
    Resonator r1, r2, r3;
    double pitch_phase = uniform(rng, 0, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        const double glide = label == 3 ? 0.5 - 0.5 * std::cos(kTwoPi * syllable_rate * 0.5 * t + phase) : 0.0;
        const double pitch = f0 * (1.0 + 0.04 * std::sin(kTwoPi * vib_rate * t + phase));
        pitch_phase += pitch / kSampleRate;
        double excitation = 0.0;
        if (pitch_phase >= 1.0) {
            pitch_phase -= 1.0;
            excitation = 1.0;
        }
        const double f1 = from.f1 + glide * (to.f1 - from.f1);
        const double f2 = from.f2 + glide * (to.f2 - from.f2);
        const double f3 = from.f3 + glide * (to.f3 - from.f3);
        const double y = r1.step(excitation, f1, 80) + 0.7 * r2.step(excitation, f2, 100) +
                         0.4 * r3.step(excitation, f3, 140);
        const double envelope = 0.55 + 0.45 * std::sin(kTwoPi * syllable_rate * t + phase);
        out[i] = y * envelope;
    }
}

void add_note(std::vector<double>& out, double freq, std::size_t start, double decay_s, int harmonics,
              double amp, Rng& rng) {
    const std::size_t attack = kSampleRate / 100;
    for (int h = 1; h <= harmonics; ++h) {
        const double f = freq * h;
        if (f >= 0.45 * kSampleRate) break;
        const double phase = uniform(rng, 0, kTwoPi);
        const double a = amp / h;
        for (std::size_t i = start; i < out.size(); ++i) {
            const double t = static_cast<double>(i - start) / kSampleRate;
            const double env = std::min(1.0, static_cast<double>(i - start) / attack) * std::exp(-t / decay_s);
            if (env < 1e-4 && i - start > attack) break;
            out[i] += a * env * std::sin(kTwoPi * f * t + phase);
        }
    }
}

void music_like(std::vector<double>& out, int label, Rng& rng) {
    const double root = log_uniform(rng, 196, 392);
    const std::size_t n = out.size();
    switch (label) {
        case 4:
        case 5: {
            const double third = label == 4 ? 4.0 : 3.0;
            for (double semis : {0.0, third, 7.0})
                add_note(out, root * std::pow(2.0, semis / 12.0), 0, uniform(rng, 1.5, 3.0), 6, 1.0, rng);
            break;
        }
        case 6: {
            static constexpr std::array<double, 6> kSteps = {0, 4, 7, 12, 16, 19};
            const double note_s = uniform(rng, 0.16, 0.24);
            const auto hop = static_cast<std::size_t>(note_s * kSampleRate);
            std::size_t k = 0;
            for (std::size_t start = 0; start < n; start += hop, ++k)
                add_note(out, root * std::pow(2.0, kSteps[k % kSteps.size()] / 12.0), start, 0.15, 5, 1.0, rng);
            break;
        }
        default: {
            const double bass = log_uniform(rng, 55, 110);
            const double period_s = uniform(rng, 0.3, 0.5);
            const auto hop = static_cast<std::size_t>(period_s * kSampleRate);
            for (std::size_t start = static_cast<std::size_t>(uniform(rng, 0, 0.1) * kSampleRate); start < n;
                 start += hop)
                add_note(out, bass, start, 0.2, 12, 1.0, rng);
            break;
        }
    }
}

void general(std::vector<double>& out, int label, Rng& rng) {
    const std::size_t n = out.size();
    const double duration = static_cast<double>(n) / kSampleRate;
    std::normal_distribution<double> gauss(0.0, 1.0);
    switch (label) {
        case 8:
        case 9: {
            const double f_start = label == 8 ? uniform(rng, 200, 400) : uniform(rng, 6000, 7000);
            const double f_end = label == 8 ? uniform(rng, 3000, 4000) : uniform(rng, 1000, 1500);
            const double k = std::log(f_end / f_start) / duration;
            double phase = uniform(rng, 0, kTwoPi);
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / kSampleRate;
                phase += kTwoPi * f_start * std::exp(k * t) / kSampleRate;
                out[i] = std::sin(phase);
            }
            break;
        }
        case 10: {
            const double centre = uniform(rng, 1500, 4000);
            Resonator band;
            std::vector<double> gate(n, 0.0);
            const int bursts = std::max(1, static_cast<int>(duration * uniform(rng, 3.0, 6.0)));
            for (int b = 0; b < bursts; ++b) {
                const auto start = static_cast<std::size_t>(uniform(rng, 0, duration) * kSampleRate);
                const auto len = static_cast<std::size_t>(uniform(rng, 0.05, 0.15) * kSampleRate);
                for (std::size_t i = start; i < std::min(n, start + len); ++i) gate[i] = 1.0;
            }
            for (std::size_t i = 0; i < n; ++i) out[i] = band.step(gauss(rng) * gate[i], centre, 600);
            break;
        }
        default: {
            const int clicks = std::max(1, static_cast<int>(duration * uniform(rng, 6.0, 10.0)));
            const double ring = uniform(rng, 4000, 6000);
            for (int c = 0; c < clicks; ++c) {
                const auto start = static_cast<std::size_t>(uniform(rng, 0, duration) * kSampleRate);
                const double amp = uniform(rng, 0.5, 1.0);
                for (std::size_t i = start; i < std::min(n, start + kSampleRate / 50); ++i) {
                    const double t = static_cast<double>(i - start) / kSampleRate;
                    out[i] += amp * std::exp(-t / 0.002) * std::cos(kTwoPi * ring * t);
                }
            }
            break;
        }
    }
}

}  // namespace

std::string_view domain_name(Domain d) {
    switch (d) {
        case Domain::speech_like: return "speech_like";
        case Domain::music_like: return "music_like";
        case Domain::general: return "general";
    }
    return "unknown";
}

Domain parse_domain(std::string_view name) {
    for (int d = 0; d < kNumDomains; ++d)
        if (domain_name(static_cast<Domain>(d)) == name) return static_cast<Domain>(d);
    throw ConfigError("unknown domain '" + std::string(name) + "'");
}

std::string_view class_name(int class_label) {
    if (class_label < 0 || class_label >= kNumClasses)
        throw ConfigError("unknown class label " + std::to_string(class_label));
    return kClassNames[static_cast<std::size_t>(class_label)];
}

Domain class_domain(int class_label) {
    if (class_label < 0 || class_label >= kNumClasses)
        throw ConfigError("unknown class label " + std::to_string(class_label));
    return static_cast<Domain>(class_label / kClassesPerDomain);
}

LabeledClip generate_clip(const ClipSpec& spec) {
    if (class_domain(spec.class_label) != spec.domain)
        throw ConfigError("class " + std::string(class_name(spec.class_label)) + " does not belong to domain " +
                          std::string(domain_name(spec.domain)));
    if (!(spec.duration_s > 0)) throw ConfigError("clip duration must be positive");

    const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * kSampleRate));
    Rng rng(splitmix64(spec.seed ^ (static_cast<std::uint64_t>(spec.class_label) << 56)));
    std::vector<double> x(n, 0.0);
    switch (spec.domain) {
        case Domain::speech_like: speech_like(x, spec.class_label, rng); break;
        case Domain::music_like: music_like(x, spec.class_label, rng); break;
        case Domain::general: general(x, spec.class_label, rng); break;
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : x) v += 1e-3 * gauss(rng);

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    const double gain = peak > 0 ? uniform(rng, 0.5, 0.9) / peak : 0.0;

    LabeledClip clip;
    clip.domain = spec.domain;
    clip.class_label = spec.class_label;
    clip.seed = spec.seed;
    clip.wave.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        clip.wave.samples[i] = static_cast<float>(std::clamp(x[i] * gain, -1.0, 1.0));
    return clip;
}

std::uint64_t clip_seed(std::uint64_t master_seed, int class_label, int index) {
    const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(class_label)) << 32) |
                     static_cast<std::uint32_t>(index);
    return master_seed ^ splitmix64(key);
}

std::vector<LabeledClip> generate_corpus(int n_per_class, const std::vector<ClipSpec>& classes,
                                         std::uint64_t master_seed) {
    if (classes.empty()) throw ConfigError("corpus needs at least one class template");
    if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
    std::vector<LabeledClip> clips(classes.size() * static_cast<std::size_t>(n_per_class));
    parallel_for(clips.size(), [&](std::size_t i) {
        const auto& tmpl = classes[i / static_cast<std::size_t>(n_per_class)];
        ClipSpec spec = tmpl;
        spec.seed = clip_seed(master_seed, tmpl.class_label, static_cast<int>(i % static_cast<std::size_t>(n_per_class)));
        clips[i] = generate_clip(spec);
    });
    return clips;
}

std::vector<ClipSpec> default_class_templates(double duration_s) {
    std::vector<ClipSpec> out;
    for (int c = 0; c < kNumClasses; ++c) out.push_back({class_domain(c), c, duration_s, 0});
    return out;
}

std::vector<ClipSpec> domain_class_templates(Domain d, double duration_s) {
    std::vector<ClipSpec> out;
    for (int k = 0; k < kClassesPerDomain; ++k) {
        const int c = static_cast<int>(d) * kClassesPerDomain + k;
        out.push_back({d, c, duration_s, 0});
    }
    return out;
}

void write_corpus(const std::string& dir, const std::vector<LabeledClip>& clips) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir);
    std::ofstream manifest(fs::path(dir) / "manifest.tsv");
    if (!manifest) throw IoError("cannot create manifest in " + dir);
    for (std::size_t i = 0; i < clips.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%05zu.wav", i);
        write_wav((fs::path(dir) / name).string(), clips[i].wave);
        manifest << name << '\t' << domain_name(clips[i].domain) << '\t' << clips[i].class_label << '\n';
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path);
    std::vector<ManifestEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string path, domain, label;
        if (!std::getline(fields, path, '\t') || !std::getline(fields, domain, '\t') || !std::getline(fields, label))
            throw FormatError("manifest line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        ManifestEntry e;
        e.path = path;
        e.domain = parse_domain(domain);
        try {
            e.class_label = std::stoi(label);
        } catch (const std::exception&) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": bad class label");
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<LabeledClip> load_corpus(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const auto base = fs::path(manifest_path).parent_path();
    std::vector<LabeledClip> clips;
    for (const auto& e : read_manifest(manifest_path)) {
        const fs::path p = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
        LabeledClip c;
        c.wave = read_wav(p.string());
        c.domain = e.domain;
        c.class_label = e.class_label;
        clips.push_back(std::move(c));
    }
    return clips;
}

}  // namespace smc
