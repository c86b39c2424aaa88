#include "doctest.h"
#include "smc/spectral.hpp"

#include <cmath>
#include <numbers>

using namespace smc;

namespace {

Waveform tone(double hz, double seconds, double amp = 0.5) {
    Waveform w;
    const auto n = static_cast<std::size_t>(seconds * kSampleRate);
    for (std::size_t i = 0; i < n; ++i)
        w.samples.push_back(static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRate)));
    return w;
}

double rms(const std::vector<float>& x, std::size_t from, std::size_t to) {
    double acc = 0;
    for (std::size_t i = from; i < to; ++i) acc += static_cast<double>(x[i]) * x[i];
    return std::sqrt(acc / static_cast<double>(to - from));
}

}  // namespace

TEST_CASE("ten seconds of audio give 1024 frames and 512 patches") {
    Waveform w;
    w.samples.assign(163840, 0.0f);
    const auto mel = waveform_to_logmel(w);
    CHECK(mel.frames() == 1024);
    CHECK(mel.bins() == 128);
    const auto grid = patchify(mel, 16);
    CHECK(grid.count() == 512);
    CHECK(grid.t_patches == 64);
    CHECK(grid.f_patches == 8);
}

TEST_CASE("silence sits at the log floor") {
    Waveform w;
    w.samples.assign(16000, 0.0f);
    const auto mel = waveform_to_logmel(w);
    CHECK(mel.values.maxCoeff() == doctest::Approx(std::log(1e-5)));
    CHECK(mel.values.minCoeff() == doctest::Approx(std::log(1e-5)));
}

TEST_CASE("filterbank rows follow the HTK mel scale") {
    const auto fb = mel_filterbank(1024, 128, 0.0, 8000.0);
    CHECK(fb.rows() == 128);
    CHECK(fb.cols() == 513);
    const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
    for (Eigen::Index m = 0; m < fb.rows(); ++m) {
        CHECK(fb.row(m).sum() > 0);
        CHECK(fb.row(m).maxCoeff() <= 1.0);
        const double centre = 700.0 * (std::pow(10.0, top * static_cast<double>(m + 1) / 129.0 / 2595.0) - 1.0);
        Eigen::Index peak;
        fb.row(m).maxCoeff(&peak);
        CHECK(std::abs(static_cast<double>(peak) * 15.625 - centre) <= 15.625);
    }
    CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("a 1 kHz tone peaks in the same mel bin every frame") {
    const auto mel = waveform_to_logmel(tone(1000.0, 1.0));
    const auto fb = mel_filterbank(1024, 128, 0.0, 8000.0);
    Eigen::Index expected;
    fb.col(64).maxCoeff(&expected);  // 1000 Hz is exactly FFT bin 64
    for (Eigen::Index t = 4; t < mel.frames() - 4; ++t) {
        Eigen::Index arg;
        mel.values.row(t).maxCoeff(&arg);
        CHECK(arg == expected);
    }
}

TEST_CASE("patchify and unpatchify are inverse") {
    MelSpectrogram mel;
    mel.values = RowMatrixXf::Random(64, 128);
    const auto grid = patchify(mel, 16);
    CHECK(grid.patches(1, 0) == mel.values(0, 16));
    CHECK(grid.patches(8, 17) == mel.values(17, 1));
    CHECK(unpatchify(grid, mel.config).values == mel.values);
    MelSpectrogram odd;
    odd.values = RowMatrixXf::Zero(100, 128);
    CHECK_THROWS_AS(patchify(odd, 16), ShapeError);
}

TEST_CASE("stft and istft reconstruct the interior") {
    const auto w = tone(440.0, 0.5);
    const auto back = istft(stft(w.samples, 1024, 160), 1024, 160);
    for (std::size_t i = 1024; i + 1024 < back.size(); ++i) CHECK(std::abs(back[i] - w.samples[i]) < 1e-5);
}

TEST_CASE("griffin-lim recovers a tone") {
    const auto mel = waveform_to_logmel(tone(500.0, 1.0));
    const auto out = griffin_lim(mel, 64, 3);
    REQUIRE(out.samples.size() == 16000);
    const auto spec = stft(out.samples, 1024, 160);
    Eigen::VectorXd avg = spec.cwiseAbs().colwise().mean().transpose();
    Eigen::Index arg;
    avg.maxCoeff(&arg);
    CHECK(std::abs(static_cast<double>(arg) - 32.0) <= 1.0);
    CHECK(griffin_lim(mel, 8, 5).samples == griffin_lim(mel, 8, 5).samples);

    Waveform silence;
    silence.samples.assign(16000, 0.0f);
    const auto quiet = griffin_lim(waveform_to_logmel(silence), 16, 1);
    CHECK(rms(quiet.samples, 0, quiet.samples.size()) < 1e-3);
    CHECK_THROWS_AS(griffin_lim(mel, 0, 1), ConfigError);
}

TEST_CASE("config validation") {
    SpectralConfig c;
    c.n_fft = 1000;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n_mels = 120;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    Waveform empty;
    CHECK_THROWS_AS(waveform_to_logmel(empty), EmptyInputError);
}
