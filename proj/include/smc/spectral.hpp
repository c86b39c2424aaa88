#pragma once

#include "smc/audio_io.hpp"

#include <complex>

namespace smc {

struct SpectralConfig {
    int n_fft = 1024;
    int hop = 160;
    int n_mels = 128;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-5;
    int patch = 16;

    void validate() const;
};

// Log-mel values, T frames x n_mels bins.
struct MelSpectrogram {
    RowMatrixXf values;
    SpectralConfig config;

    Eigen::Index frames() const { return values.rows(); }
    Eigen::Index bins() const { return values.cols(); }
};

// L = (T/P)(F/P) patches; patch index = time_patch * f_patches + freq_patch and
// each row holds one P x P block flattened time-major.
struct PatchGrid {
    RowMatrixXf patches;
    int t_patches = 0;
    int f_patches = 0;
    int patch = 16;

    Eigen::Index count() const { return patches.rows(); }
};

using ComplexSpectrogram = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Periodic Hann window of length n.
Eigen::VectorXd hann_window(int n);

// Triangular HTK-spaced filterbank, n_mels x (n_fft/2 + 1), peak weight 1.
RowMatrixXd mel_filterbank(int n_fft, int n_mels, double fmin, double fmax, int sample_rate = kSampleRate);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Centred framing: frame t covers [t*hop - n_fft/2, t*hop + n_fft/2) with zeros
// outside the signal, and there are floor(n / hop) frames.
ComplexSpectrogram stft(std::span<const float> samples, int n_fft, int hop);
// Windowed overlap-add inverse; returns frames * hop samples.
std::vector<float> istft(const ComplexSpectrogram& spec, int n_fft, int hop);

MelSpectrogram waveform_to_logmel(const Waveform& w, const SpectralConfig& cfg = {});
// Generic log-mel with an explicit window; used by the distance metrics.
RowMatrixXd logmel(std::span<const float> samples, int n_fft, int hop, int n_mels, double fmax, double floor,
                   double fmin = 0.0);

PatchGrid patchify(const MelSpectrogram& mel, int patch);
MelSpectrogram unpatchify(const PatchGrid& grid, const SpectralConfig& cfg);

// Mel -> linear magnitude by transpose-and-normalise, then Griffin-Lim phase
// recovery from a seeded random phase.
Waveform griffin_lim(const MelSpectrogram& mel, int iters, std::uint64_t seed);

}  // namespace smc
