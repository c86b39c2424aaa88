#include "doctest.h"
#include "smc/eval.hpp"

#include <cmath>
#include <numbers>

using namespace smc;

namespace {

Waveform tone(double hz, double amp, double seconds = 1.0) {
    Waveform w;
    for (int i = 0; i < static_cast<int>(seconds * kSampleRate); ++i)
        w.samples.push_back(static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / kSampleRate)));
    return w;
}

}  // namespace

TEST_CASE("spectral distance basics") {
    const auto a = tone(440, 0.5);
    const auto b = tone(660, 0.3);
    const auto same = spectral_distance(a, a);
    CHECK(same.mel == 0.0);
    CHECK(same.stft == 0.0);
    const auto ab = spectral_distance(a, b);
    const auto ba = spectral_distance(b, a);
    CHECK(ab.mel > 0);
    CHECK(ab.mel == doctest::Approx(ba.mel));
    CHECK(ab.stft == doctest::Approx(ba.stft));
    CHECK_THROWS_AS(spectral_distance(a, tone(440, 0.5, 0.5)), ShapeError);
}

TEST_CASE("a quieter copy is closer than silence") {
    const auto a = tone(1000, 0.5);
    const auto quieter = tone(1000, 0.5 / std::sqrt(2.0));  // -3 dB
    Waveform silence;
    silence.samples.assign(a.samples.size(), 0.0f);
    const auto near = spectral_distance(a, quieter);
    const auto far = spectral_distance(a, silence);
    CHECK(near.mel < far.mel);
    CHECK(near.stft < far.stft);
    // A uniform gain shifts every unfloored log magnitude by log(sqrt 2).
    CHECK(near.stft <= std::log(std::sqrt(2.0)) + 1e-6);
}

TEST_CASE("stratified split keeps every class on both sides") {
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 10; ++i) labels.push_back(c);
    std::vector<std::size_t> train, test;
    stratified_split(labels, 0.2, 1, train, test);
    CHECK(train.size() == 32);
    CHECK(test.size() == 8);
    for (int c = 0; c < 4; ++c)
        CHECK(std::count_if(test.begin(), test.end(), [&](std::size_t i) { return labels[i] == c; }) == 2);
}

TEST_CASE("probe separates separable data and stays near chance on random labels") {
    Rng rng(4);
    std::normal_distribution<float> g;
    const int n = 200, d = 8;
    RowMatrixXf x(n, d);
    std::vector<int> labels(n), noise(n);
    for (int i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = i % 4;
        noise[static_cast<std::size_t>(i)] = std::uniform_int_distribution<int>(0, 3)(rng);
        for (int j = 0; j < d; ++j) x(i, j) = g(rng) + (j == i % 4 ? 4.0f : 0.0f);
    }
    ProbeOptions opt;
    opt.seed = 2;
    const auto good = probe_eval(x, labels, opt);
    CHECK(good.accuracy >= 0.95);
    CHECK(good.classes == 4);
    RowMatrixXf pure(n, d);
    for (Eigen::Index i = 0; i < pure.size(); ++i) pure.data()[i] = g(rng);
    const auto chance = probe_eval(pure, noise, opt);
    CHECK(chance.accuracy <= 0.5);
    CHECK_THROWS_AS(probe_eval(x, std::vector<int>(n, 1), opt), ConfigError);
}

TEST_CASE("identity reconstruction reports zero distance and exact rates") {
    std::vector<LabeledClip> clips = generate_corpus(1, domain_class_templates(Domain::general, 0.5), 3);
    PacketHeader h;
    h.semantic_vocab = 32768;
    h.acoustic_vocab = 8192;
    const auto r = eval_reconstruction(clips, [](const Waveform& w) { return w; }, bitrate_report(h));
    CHECK(r.clips == 4);
    CHECK(r.mel_distance == 0.0);
    CHECK(r.stft_distance == 0.0);
    REQUIRE(r.per_domain.size() == 1);
    CHECK(r.per_domain[0].domain == Domain::general);
    const auto text = report_text(r);
    CHECK(text.find("kbps_total=1.400") != std::string::npos);
    const auto csv = report_csv(r);
    CHECK(csv.find("general,4,0.000000,0.000000,1.400,100") != std::string::npos);
    CHECK(csv.find("all,4,") != std::string::npos);
    CHECK_THROWS_AS(eval_reconstruction({}, [](const Waveform& w) { return w; }, bitrate_report(h)), EmptyInputError);
}
