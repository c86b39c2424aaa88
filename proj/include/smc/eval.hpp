#pragma once

#include "smc/pipeline.hpp"

namespace smc {

struct SpectralDistance {
    double mel = 0;
    double stft = 0;
};

// Mean L1 between log magnitudes (STFT) and log-mels (64 bins) for windows
// 512, 1024 and 2048 with hop window/4, averaged over the three scales.
SpectralDistance spectral_distance(const Waveform& a, const Waveform& b);

enum class ProbeLayers { semantic_only, acoustic_only, both };
std::string_view probe_layers_name(ProbeLayers l);

struct ProbeOptions {
    int hidden = 128;
    int steps = 400;
    double lr = 1e-2;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct ProbeResult {
    ProbeLayers layers = ProbeLayers::both;
    double accuracy = 0;
    int classes = 0;
    std::size_t train = 0;
    std::size_t test = 0;
};

// Stratified seeded split: per class, round(n * test_fraction) (at least one) go to test.
void stratified_split(const std::vector<int>& labels, double test_fraction, std::uint64_t seed,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& test);

// Two linear layers with a tanh between them, trained by full-batch Adam on
// standardised inputs; returns test accuracy.
ProbeResult probe_eval(const RowMatrixXf& features, const std::vector<int>& labels, const ProbeOptions& opt,
                       ProbeLayers layers = ProbeLayers::both);

// Time-averaged quantized features per clip (first window), selected columns.
RowMatrixXf clip_features(const std::vector<LabeledClip>& clips, const CodecModels& m, ProbeLayers layers);

ProbeResult probe_eval(const std::vector<LabeledClip>& clips, const CodecModels& m, ProbeLayers layers,
                       const ProbeOptions& opt);

struct DomainMetrics {
    Domain domain = Domain::general;
    int clips = 0;
    double mel = 0;
    double stft = 0;
};

struct MetricReport {
    int clips = 0;
    double mel_distance = 0;
    double stft_distance = 0;
    BitrateReport rate;
    std::vector<DomainMetrics> per_domain;
};

using Reconstructor = std::function<Waveform(const Waveform&)>;

MetricReport eval_reconstruction(const std::vector<LabeledClip>& clips, const Reconstructor& reconstruct,
                                 const BitrateReport& rate);
// Full encode -> packet bytes -> decode path.
MetricReport eval_reconstruction(const std::vector<LabeledClip>& clips, const CodecModels& m,
                                 const DecodeOptions& opt = {});

std::string report_text(const MetricReport& r);
// Header row then one row per domain and an "all" row.
std::string report_csv(const MetricReport& r);

}  // namespace smc
