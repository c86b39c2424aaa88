#pragma once

#include "smc/nn.hpp"
#include "smc/spectral.hpp"

#include <functional>

namespace smc {

// Cumulative signal levels; alpha_bar[0] = 1 (clean), alpha_bar[N] = 0.
struct NoiseSchedule {
    std::vector<double> alpha_bar;

    int steps() const { return static_cast<int>(alpha_bar.size()) - 1; }
    double at(int n) const;
    double beta(int n) const;  // 1 - abar_n / abar_{n-1}, n >= 1
};

// Cosine schedule abar_n = cos^2(((n/N + s)/(1 + s)) pi/2), rescaled in sqrt
// space so abar_1 is kept and abar_N becomes exactly 0.
NoiseSchedule build_schedule(int n_steps, double s = 0.008);

RowMatrixXf forward_diffuse(const RowMatrixXf& z0, int n, const RowMatrixXf& eps, const NoiseSchedule& sched);
RowMatrixXf v_target(const RowMatrixXf& z0, const RowMatrixXf& eps, int n, const NoiseSchedule& sched);
RowMatrixXf z0_from_v(const RowMatrixXf& zn, const RowMatrixXf& v, int n, const NoiseSchedule& sched);
RowMatrixXf eps_from_v(const RowMatrixXf& zn, const RowMatrixXf& v, int n, const NoiseSchedule& sched);

RowMatrixXf gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// ---- latent coder -------------------------------------------------------------

struct LatentCoderSpec {
    int block_t = 16;  // mel frames per latent block
    int block_f = 8;   // mel bins per latent block
    int dz = 8;        // latent dims per block
};

// Linear block coder: each block_t x block_f mel block is normalised and
// projected onto its top dz principal directions, scaled to unit variance.
// The latent is a (T/block_t * F/block_f) x dz matrix, blocks time-major.
class LatentCoder {
public:
    LatentCoder() = default;

    static LatentCoder fit(const std::vector<RowMatrixXf>& mels, const LatentCoderSpec& spec);

    RowMatrixXf encode(const RowMatrixXf& mel) const;
    RowMatrixXf decode(const RowMatrixXf& z, Eigen::Index frames, Eigen::Index bins) const;
    double reconstruction_mse(const RowMatrixXf& mel) const;

    const LatentCoderSpec& spec() const { return spec_; }
    bool fitted() const { return basis_.size() > 0; }
    double train_mse() const { return train_mse_; }

    // Flat parameter view for checkpoints: mean, std, block mean, basis, scales.
    std::vector<float> parameters() const;
    static LatentCoder from_parameters(const LatentCoderSpec& spec, std::span<const float> values);

private:
    RowMatrixXf blocks(const RowMatrixXf& mel) const;

    LatentCoderSpec spec_;
    float mel_mean_ = 0.0f;
    float mel_std_ = 1.0f;
    Eigen::RowVectorXf block_mean_;
    RowMatrixXf basis_;            // (block_t*block_f) x dz
    Eigen::RowVectorXf scales_;    // dz
    double train_mse_ = 0.0;
};

// Latent (blocks x dz) <-> denoiser tokens aligned with condition rows:
// two frequency-adjacent blocks form one patch and K patches one token.
RowMatrixXf latent_to_tokens(const RowMatrixXf& z, int blocks_per_token);
RowMatrixXf tokens_to_latent(const RowMatrixXf& tokens, int dz);

// ---- denoiser -------------------------------------------------------------------

struct DenoiserSpec {
    int token_dim = 16;  // latent values per token
    int cond_dim = 128;  // 2*K*E
    int channels = 128;
    int heads = 4;
    int blocks = 2;
    int schedule_steps = 1000;
};

struct CFGConfig {
    double w = 3.0;
    double p_drop = 0.1;
    // Literal weighting (1 - w) v_c + w v_u instead of v_u + w (v_c - v_u).
    bool literal_form = false;

    void validate() const;
};

// Blend of conditional and unconditional velocity. Written as
// w v_c + (1 - w) v_u so w = 1 and w = 0 return a branch exactly.
RowMatrixXf guided_velocity(const RowMatrixXf& v_cond, const RowMatrixXf& v_uncond, const CFGConfig& cfg);

// Token-wise residual network with cross-attention to the condition sequence.
// A fixed sinusoidal positional embedding is added to the condition (or to the
// learned null condition) before use.
class Denoiser {
public:
    Denoiser() = default;
    explicit Denoiser(const DenoiserSpec& spec);

    void init(nn::ParamStore<float>& store, Rng& rng) const;

    // z_n: (batch*T) x token_dim; cond: (batch*T) x cond_dim; steps: one per item.
    nn::Var forward(nn::Tape<float>& tape, nn::ParamStore<float>& store, nn::Var z_n, const std::vector<int>& steps,
                    nn::Var cond, int batch) const;

    // Null condition for `rows` positions (learned row broadcast).
    nn::Var null_condition(nn::Tape<float>& tape, nn::ParamStore<float>& store, Eigen::Index rows) const;

    // Single-sequence inference; cond == nullptr selects the null condition.
    RowMatrixXf predict(const nn::ParamStore<float>& store, const RowMatrixXf& z_n, int step,
                        const RowMatrixXf* cond) const;

    const DenoiserSpec& spec() const { return spec_; }

private:
    DenoiserSpec spec_;
    nn::Dense<float> in_, cond_, time1_, time2_, out_;
    std::vector<nn::LayerNorm<float>> norm_attn_, norm_mlp_;
    std::vector<nn::CrossAttention<float>> attn_;
    std::vector<nn::Dense<float>> mlp1_, mlp2_;
    nn::LayerNorm<float> norm_out_;
};

// Velocity model for sampling: (z_n, n, conditional?) -> v.
using VelocityFn = std::function<RowMatrixXf(const RowMatrixXf&, int, bool)>;

// Trailing timestep subset N, N - N/S, ..., ending with the step to 0.
std::vector<int> ddim_timesteps(int n_steps, int sample_steps);

// Deterministic DDIM from z_N ~ N(0, I) (seeded). When cfg.w differs from 1
// both branches are evaluated and blended.
RowMatrixXf ddim_sample(const NoiseSchedule& sched, int sample_steps, const VelocityFn& velocity, const CFGConfig& cfg,
                        std::uint64_t seed, Eigen::Index rows, Eigen::Index cols);

RowMatrixXf ddim_sample(const NoiseSchedule& sched, int sample_steps, const Denoiser& model,
                        const nn::ParamStore<float>& store, const RowMatrixXf& cond, const CFGConfig& cfg,
                        std::uint64_t seed);

}  // namespace smc
