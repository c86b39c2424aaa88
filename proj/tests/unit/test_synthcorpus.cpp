#include "doctest.h"
#include "smc/spectral.hpp"
#include "smc/synthcorpus.hpp"

#include <algorithm>
#include <cmath>

using namespace smc;

TEST_CASE("clips are deterministic and bounded") {
    const ClipSpec spec{Domain::general, 8, 2.56, 42};
    const auto a = generate_clip(spec);
    const auto b = generate_clip(spec);
    CHECK(a.wave.samples.size() == 40960);
    CHECK(a.wave.samples == b.wave.samples);
    auto other = spec;
    other.seed = 43;
    CHECK(generate_clip(other).wave.samples != a.wave.samples);
    for (int label = 0; label < kNumClasses; ++label) {
        const auto c = generate_clip({class_domain(label), label, 1.0, 9});
        CHECK(c.wave.samples.size() == 16000);
        float peak = 0;
        for (float s : c.wave.samples) {
            CHECK(std::isfinite(s));
            peak = std::max(peak, std::abs(s));
        }
        CHECK(peak <= 1.0f);
        CHECK(peak > 0.01f);
    }
}

TEST_CASE("class and domain names") {
    CHECK(class_name(8) == "chirp-up");
    CHECK(class_domain(5) == Domain::music_like);
    CHECK(parse_domain(domain_name(Domain::speech_like)) == Domain::speech_like);
    CHECK_THROWS_AS(parse_domain("birdsong"), ConfigError);
}

TEST_CASE("corpus ordering and counts") {
    const auto c = generate_corpus(3, default_class_templates(0.5), 11);
    REQUIRE(c.size() == 36);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const int label = static_cast<int>(i / 3);
        CHECK(c[i].class_label == label);
        CHECK(c[i].domain == class_domain(label));
        CHECK(c[i].seed == clip_seed(11, label, static_cast<int>(i % 3)));
    }
    CHECK(generate_corpus(3, default_class_templates(0.5), 12)[0].wave.samples != c[0].wave.samples);
    CHECK(domain_class_templates(Domain::music_like).size() == 4);
}

namespace {

// Spectral centroid (Hz) over a frame range, from a plain magnitude STFT.
double centroid(const ComplexSpectrogram& s, Eigen::Index t0, Eigen::Index t1) {
    double num = 0, den = 0;
    for (Eigen::Index t = t0; t < t1; ++t)
        for (Eigen::Index k = 0; k < s.cols(); ++k) {
            const double m = std::abs(s(t, k));
            num += m * static_cast<double>(k) * kSampleRate / 1024.0;
            den += m;
        }
    return num / std::max(den, 1e-12);
}

}  // namespace

TEST_CASE("chirp directions are linearly separable") {
    std::vector<ClipSpec> classes = {{Domain::general, 8, 1.0, 0}, {Domain::general, 9, 1.0, 0}};
    const auto clips = generate_corpus(100, classes, 2024);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(clips.size()), 3);
    Eigen::VectorXd y(x.rows());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto s = stft(clips[i].wave.samples, 1024, 256);
        const auto half = s.rows() / 2;
        const auto r = static_cast<Eigen::Index>(i);
        x(r, 0) = centroid(s, 0, half) / 1000.0;
        x(r, 1) = centroid(s, half, s.rows()) / 1000.0;
        x(r, 2) = 1.0;
        y(r) = clips[i].class_label == 8 ? 1.0 : -1.0;
    }
    const Eigen::VectorXd w = x.colPivHouseholderQr().solve(y);
    const Eigen::VectorXd pred = x * w;
    int correct = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) correct += (pred(i) > 0) == (y(i) > 0);
    CHECK(correct >= 198);
}
