#pragma once

#include "smc/bitstream.hpp"
#include "smc/clustering.hpp"
#include "smc/diffusion.hpp"
#include "smc/features.hpp"
#include "smc/quantizers.hpp"
#include "smc/synthcorpus.hpp"

#include <functional>
#include <map>

namespace smc {

struct CodecConfig {
    SpectralConfig spectral;
    int embed_dim = 64;
    int stack = 1;
    std::uint64_t extractor_seed = 0x5eed;
    int family_base = 4096;     // ensemble sizes base, 2x, 4x, 8x
    int semantic_size = 32768;  // ensemble used by encode
    int acoustic_size = 8192;   // 1 removes the acoustic layer
    int acoustic_hidden = 0;    // 0 -> 2 x encoder input dim
    double ema_decay = 0.99;
    double commit_weight = 1.0;
    LatentCoderSpec latent;
    int denoiser_channels = 128;
    int denoiser_heads = 4;
    int denoiser_blocks = 2;
    int schedule_steps = 1000;
    int sample_steps = 50;
    double guidance = 3.0;
    double p_drop = 0.1;
    bool literal_cfg = false;
    int griffin_lim_iters = 32;
    double window_s = 10.24;
    double overlap = 0.0625;
    // training
    int train_steps = 2000;
    int batch = 8;
    double lr = 1e-4;
    long warmup_steps = 5000;
    int log_every = 50;
    int eval_every = 100;

    void validate() const;
    bool has_acoustic() const { return acoustic_size > 1; }
    WindowProfile window() const { return window_profile_for_seconds(window_s); }
    int patches() const { return window().patches; }
    int pairs_per_window() const { return patches() / stack; }
    int frames_per_window() const { return static_cast<int>(window().samples) / spectral.hop; }
    int cond_dim() const { return 2 * stack * embed_dim; }
    // Latent values per denoiser token: two latent blocks per patch, K patches.
    int token_dim() const { return 2 * stack * latent.dz; }
    std::vector<int> family_sizes() const { return {family_base, 2 * family_base, 4 * family_base, 8 * family_base}; }
};

// Small, fast profile used by tests and the acceptance run: 2.56 s windows,
// family {64..512}, N_a = 256.
CodecConfig desk_config();

// `key = value` lines; '#' starts a comment. Unknown keys are rejected.
CodecConfig parse_config(std::string_view text, CodecConfig base = {});
CodecConfig load_config(const std::string& path, CodecConfig base = {});
std::string config_to_text(const CodecConfig& cfg);
// Rejects configs whose feature geometry differs (E, K, spectral, window, latent).
void check_compatible(const CodecConfig& expected, const CodecConfig& actual);

// Everything needed to encode and decode.
struct CodecModels {
    CodecConfig config;
    CodebookFamily family;
    LatentCoder latent;
    nn::ParamStore<float> params;  // acoustic encoder + denoiser (+ Adam state)
    AcousticVQ vq;

    SurrogateExtractor extractor() const;
    AcousticEncoder encoder() const;
    Denoiser denoiser() const;
    NoiseSchedule schedule() const;
};

// Fresh trainable state around frozen family and latent coder.
CodecModels initialise_models(const CodecConfig& cfg, CodebookFamily family, LatentCoder latent, std::uint64_t seed);

// "SMCW", u32 version, u32 records, then (u16 name length, name, u32 rows,
// u32 cols, u8 type, rows*cols values) per record, CRC32. Types: 0 f32,
// 1 f64 (EMA statistics, step), 2 u8 (config text).
std::vector<std::uint8_t> serialize_checkpoint(const CodecModels& m);
CodecModels deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const CodecModels& m);
// When `expected` is given, geometry mismatches raise ConfigError.
CodecModels load_checkpoint(const std::string& path, const CodecConfig* expected = nullptr);

// CRC32 fingerprints of the frozen parts.
struct FrozenHashes {
    std::uint32_t extractor = 0;
    std::uint32_t codebooks = 0;
    std::uint32_t latent = 0;
    bool operator==(const FrozenHashes&) const = default;
};
FrozenHashes frozen_hashes(const CodecModels& m);

// ---- analysis ---------------------------------------------------------------

// Per-window analysis results (window-length audio).
struct WindowAnalysis {
    RowMatrixXf mel;          // frames x n_mels
    StackedFeatures features; // (L/K) x KE
    RowMatrixXf latent_tokens;  // (L/K) x token_dim
};

// Pads with zeros or crops to exactly one window.
std::vector<float> fit_to_window(std::span<const float> samples, std::size_t window);
FeatureSequence extract_features(const RowMatrixXf& mel, const CodecConfig& cfg);
WindowAnalysis analyse_window(std::span<const float> window, const CodecModels& m);

// Condition rows [E_s, E_a] for token pairs.
RowMatrixXf condition_from_tokens(std::span<const int> semantic, std::span<const int> acoustic, const CodecModels& m);

// ---- windows ----------------------------------------------------------------

struct ChunkPlan {
    std::size_t window = 0;  // samples per decode window
    std::size_t stride = 0;  // window * (1 - overlap)
    std::vector<std::size_t> starts;

    std::size_t overlap() const { return window - stride; }
    std::size_t length() const { return starts.empty() ? 0 : starts.back() + window; }
    // Crossfade gain of window w at absolute sample position s.
    double gain(std::size_t w, std::size_t s) const;
};

// Decode windows covering `samples` output samples.
ChunkPlan plan_chunks(std::size_t samples, std::size_t window, double overlap);

// ---- codec -------------------------------------------------------------------

EncoderOutput encode_window(std::span<const float> window, const CodecModels& m);
CodecPacket encode_file(const Waveform& w, const CodecModels& m);

struct DecodeOptions {
    int sample_steps = -1;   // < 0: config value
    double guidance = -1.0;  // < 0: config value
    int griffin_lim_iters = -1;
    std::uint64_t seed = 7;
};

// Mel window predicted from one window of condition rows.
RowMatrixXf decode_condition(const RowMatrixXf& cond, const CodecModels& m, const DecodeOptions& opt,
                             std::uint64_t seed);
Waveform decode_file(const DecodedPacket& packet, const CodecModels& m, const DecodeOptions& opt = {});
Waveform decode_packet(std::span<const std::uint8_t> bytes, const CodecModels& m, const DecodeOptions& opt = {});

// ---- training ------------------------------------------------------------------

struct TrainingClip {
    StackedFeatures features;
    RowMatrixXf latent_tokens;
};

std::vector<TrainingClip> prepare_clips(const std::vector<LabeledClip>& clips, const CodecModels& m);

// Fits the latent coder on corpus mels (one window per clip).
LatentCoder fit_latent_coder(const std::vector<LabeledClip>& clips, const CodecConfig& cfg);
// Stacked features per domain for k-means.
std::array<RowMatrixXf, kNumDomains> domain_features(const std::vector<LabeledClip>& clips, const CodecConfig& cfg);
CodebookFamily fit_codebooks(const std::vector<LabeledClip>& clips, const CodecConfig& cfg, std::uint64_t seed,
                             int max_iters = 100);

struct TrainLog {
    long step = 0;
    int ensemble_size = 0;
    double recon = 0;      // training reconstruction loss (mean over elements)
    double commit = 0;     // per-element commitment term
    double usage = 0;      // acoustic codebook usage in the batch
};

struct ValidationPoint {
    long step = 0;
    double recon = 0;
};

struct TrainReport {
    std::vector<TrainLog> logs;            // every log_every steps
    std::vector<ValidationPoint> validation;
    std::vector<int> ensemble_draws;       // size drawn at each step
    double seconds = 0;
};

using TrainCallback = std::function<void(const TrainLog&)>;

// Joint optimisation of acoustic encoder, acoustic VQ and denoiser. Continues
// from m.params.step(). Non-finite loss raises NumericError.
TrainReport train_codec(CodecModels& m, const std::vector<TrainingClip>& train, const std::vector<TrainingClip>& val,
                        std::uint64_t seed, const TrainCallback& on_log = {});

// Mean v-prediction loss on clips with fixed noise draws (no dropout).
// shuffle_condition pairs each clip with another clip's condition.
double validation_loss(const CodecModels& m, const std::vector<TrainingClip>& clips, std::uint64_t seed,
                       bool shuffle_condition = false);

}  // namespace smc
