#include "smc/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>

namespace smc {

void SpectralConfig::validate() const {
    if (n_fft < 16 || (n_fft & (n_fft - 1)) != 0) throw ConfigError("n_fft must be a power of two >= 16");
    if (hop < 1) throw ConfigError("hop must be positive");
    if (n_mels < 1) throw ConfigError("n_mels must be positive");
    if (!(fmax > fmin) || fmax > kSampleRate / 2.0) throw ConfigError("invalid mel frequency range");
    if (!(log_floor > 0)) throw ConfigError("log floor must be positive");
    if (patch < 1 || n_mels % patch != 0) throw ConfigError("n_mels must be divisible by the patch size");
}

Eigen::VectorXd hann_window(int n) {
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

RowMatrixXd mel_filterbank(int n_fft, int n_mels, double fmin, double fmax, int sample_rate) {
    const int bins = n_fft / 2 + 1;
    const double lo = hz_to_mel(fmin);
    const double hi = hz_to_mel(fmax);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (n_mels + 1));

    RowMatrixXd fb = RowMatrixXd::Zero(n_mels, bins);
    for (int m = 0; m < n_mels; ++m) {
        const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / n_fft;
            const double rise = (f - left) / (centre - left);
            const double fall = (right - f) / (right - centre);
            fb(m, k) = std::max(0.0, std::min(rise, fall));
        }
    }
    return fb;
}

ComplexSpectrogram stft(std::span<const float> samples, int n_fft, int hop) {
    const auto n = static_cast<Eigen::Index>(samples.size());
    const Eigen::Index frames = n / hop;
    const int bins = n_fft / 2 + 1;
    const Eigen::VectorXd window = hann_window(n_fft);
    ComplexSpectrogram out(frames, bins);

    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<double> frame(static_cast<std::size_t>(n_fft));
    std::vector<std::complex<double>> spectrum;
    for (Eigen::Index t = 0; t < frames; ++t) {
        const Eigen::Index start = t * hop - n_fft / 2;
        for (int i = 0; i < n_fft; ++i) {
            const Eigen::Index s = start + i;
            frame[static_cast<std::size_t>(i)] = (s >= 0 && s < n) ? window[i] * samples[static_cast<std::size_t>(s)] : 0.0;
        }
        fft.fwd(spectrum, frame);
        for (int k = 0; k < bins; ++k) out(t, k) = spectrum[static_cast<std::size_t>(k)];
    }
    return out;
}

std::vector<float> istft(const ComplexSpectrogram& spec, int n_fft, int hop) {
    const Eigen::Index frames = spec.rows();
    const Eigen::Index n = frames * hop;
    const Eigen::VectorXd window = hann_window(n_fft);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd norm = Eigen::VectorXd::Zero(n);

    Eigen::FFT<double> fft;
    fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(spec.cols()));
    std::vector<double> frame;
    for (Eigen::Index t = 0; t < frames; ++t) {
        for (Eigen::Index k = 0; k < spec.cols(); ++k) spectrum[static_cast<std::size_t>(k)] = spec(t, k);
        fft.inv(frame, spectrum, n_fft);
        const Eigen::Index start = t * hop - n_fft / 2;
        for (int i = 0; i < n_fft; ++i) {
            const Eigen::Index s = start + i;
            if (s < 0 || s >= n) continue;
            acc[s] += window[i] * frame[static_cast<std::size_t>(i)];
            norm[s] += window[i] * window[i];
        }
    }
    std::vector<float> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = norm[i] > 1e-8 ? static_cast<float>(acc[i] / norm[i]) : 0.0f;
    return out;
}

RowMatrixXd logmel(std::span<const float> samples, int n_fft, int hop, int n_mels, double fmax, double floor,
                   double fmin) {
    const ComplexSpectrogram spec = stft(samples, n_fft, hop);
    const RowMatrixXd fb = mel_filterbank(n_fft, n_mels, fmin, fmax);
    const RowMatrixXd mag = spec.cwiseAbs();
    RowMatrixXd mel = mag * fb.transpose();
    return mel.cwiseMax(floor).array().log().matrix();
}

MelSpectrogram waveform_to_logmel(const Waveform& w, const SpectralConfig& cfg) {
    cfg.validate();
    if (w.samples.empty()) throw EmptyInputError("waveform_to_logmel: empty waveform");
    if (w.sample_rate_hz != kSampleRate) throw ConfigError("waveform_to_logmel: expected 16 kHz audio");
    MelSpectrogram out;
    out.config = cfg;
    out.values = logmel(w.samples, cfg.n_fft, cfg.hop, cfg.n_mels, cfg.fmax, cfg.log_floor, cfg.fmin).cast<float>();
    return out;
}

PatchGrid patchify(const MelSpectrogram& mel, int patch) {
    if (patch < 1 || mel.frames() % patch != 0 || mel.bins() % patch != 0)
        throw ShapeError("patchify: " + std::to_string(mel.frames()) + "x" + std::to_string(mel.bins()) +
                         " is not divisible by patch size " + std::to_string(patch));
    PatchGrid grid;
    grid.patch = patch;
    grid.t_patches = static_cast<int>(mel.frames() / patch);
    grid.f_patches = static_cast<int>(mel.bins() / patch);
    grid.patches.resize(static_cast<Eigen::Index>(grid.t_patches) * grid.f_patches, patch * patch);
    for (int tp = 0; tp < grid.t_patches; ++tp)
        for (int fp = 0; fp < grid.f_patches; ++fp) {
            const Eigen::Index row = static_cast<Eigen::Index>(tp) * grid.f_patches + fp;
            for (int dt = 0; dt < patch; ++dt)
                grid.patches.row(row).segment(dt * patch, patch) =
                    mel.values.row(tp * patch + dt).segment(fp * patch, patch);
        }
    return grid;
}

MelSpectrogram unpatchify(const PatchGrid& grid, const SpectralConfig& cfg) {
    const int p = grid.patch;
    if (grid.patches.cols() != p * p || grid.patches.rows() != static_cast<Eigen::Index>(grid.t_patches) * grid.f_patches)
        throw ShapeError("unpatchify: inconsistent patch grid");
    MelSpectrogram mel;
    mel.config = cfg;
    mel.values.resize(static_cast<Eigen::Index>(grid.t_patches) * p, static_cast<Eigen::Index>(grid.f_patches) * p);
    for (int tp = 0; tp < grid.t_patches; ++tp)
        for (int fp = 0; fp < grid.f_patches; ++fp) {
            const Eigen::Index row = static_cast<Eigen::Index>(tp) * grid.f_patches + fp;
            for (int dt = 0; dt < p; ++dt)
                mel.values.row(tp * p + dt).segment(fp * p, p) = grid.patches.row(row).segment(dt * p, p);
        }
    return mel;
}

Waveform griffin_lim(const MelSpectrogram& mel, int iters, std::uint64_t seed) {
    if (iters < 1) throw ConfigError("griffin_lim: iters must be >= 1");
    const SpectralConfig& cfg = mel.config;
    cfg.validate();
    const RowMatrixXd fb = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
    if (mel.bins() != fb.rows()) throw ShapeError("griffin_lim: mel bins do not match the config");

    // Transpose projection normalised by per-bin filter mass; bins no filter
    // touches stay at zero.
    const Eigen::RowVectorXd mass = fb.colwise().sum();
    RowMatrixXd mag = mel.values.cast<double>().array().exp().matrix() * fb;
    for (Eigen::Index k = 0; k < mag.cols(); ++k) {
        if (mass[k] > 1e-8)
            mag.col(k) /= mass[k];
        else
            mag.col(k).setZero();
    }

    Rng rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 2.0 * std::numbers::pi);
    ComplexSpectrogram phase(mag.rows(), mag.cols());
    for (Eigen::Index t = 0; t < phase.rows(); ++t)
        for (Eigen::Index k = 0; k < phase.cols(); ++k) phase(t, k) = std::polar(1.0, uni(rng));

    // Fast Griffin-Lim (momentum 0.99).
    constexpr double kMomentum = 0.99;
    ComplexSpectrogram previous = ComplexSpectrogram::Zero(mag.rows(), mag.cols());
    std::vector<float> signal;
    for (int it = 0; it < iters; ++it) {
        const ComplexSpectrogram target = mag.cast<std::complex<double>>().cwiseProduct(phase);
        signal = istft(target, cfg.n_fft, cfg.hop);
        const ComplexSpectrogram rebuilt = stft(signal, cfg.n_fft, cfg.hop);
        const ComplexSpectrogram accel = rebuilt - (kMomentum / (1.0 + kMomentum)) * previous;
        previous = rebuilt;
        for (Eigen::Index t = 0; t < phase.rows(); ++t)
            for (Eigen::Index k = 0; k < phase.cols(); ++k) {
                const double a = std::abs(accel(t, k));
                phase(t, k) = a > 1e-12 ? accel(t, k) / a : std::complex<double>(1.0, 0.0);
            }
    }
    Waveform out;
    out.samples = istft(mag.cast<std::complex<double>>().cwiseProduct(phase), cfg.n_fft, cfg.hop);
    return out;
}

}  // namespace smc
