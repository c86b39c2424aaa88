#include "smc/diffusion.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace smc {

double NoiseSchedule::at(int n) const {
    if (n < 0 || n > steps()) throw ConfigError("schedule step " + std::to_string(n) + " out of range");
    return alpha_bar[static_cast<std::size_t>(n)];
}

double NoiseSchedule::beta(int n) const {
    if (n < 1 || n > steps()) throw ConfigError("schedule step " + std::to_string(n) + " out of range");
    return 1.0 - at(n) / at(n - 1);
}

NoiseSchedule build_schedule(int n_steps, double s) {
    if (n_steps < 2) throw ConfigError("noise schedule needs N >= 2");
    const double N = n_steps;
    std::vector<double> root(static_cast<std::size_t>(n_steps) + 1);
    for (int n = 1; n <= n_steps; ++n) root[static_cast<std::size_t>(n)] = std::cos((n / N + s) / (1.0 + s) * std::numbers::pi / 2);
    const double first = root[1];
    const double last = root[static_cast<std::size_t>(n_steps)];
    NoiseSchedule sched;
    sched.alpha_bar.assign(root.size(), 1.0);
    for (int n = 1; n <= n_steps; ++n) {
        const double r = (root[static_cast<std::size_t>(n)] - last) * first / (first - last);
        sched.alpha_bar[static_cast<std::size_t>(n)] = r * r;
    }
    return sched;
}

namespace {

void check_same(const RowMatrixXf& a, const RowMatrixXf& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

RowMatrixXf forward_diffuse(const RowMatrixXf& z0, int n, const RowMatrixXf& eps, const NoiseSchedule& sched) {
    check_same(z0, eps, "forward_diffuse");
    const double a = sched.at(n);
    return (z0.cast<double>() * std::sqrt(a) + eps.cast<double>() * std::sqrt(1.0 - a)).cast<float>();
}

RowMatrixXf v_target(const RowMatrixXf& z0, const RowMatrixXf& eps, int n, const NoiseSchedule& sched) {
    check_same(z0, eps, "v_target");
    const double a = sched.at(n);
    return (eps.cast<double>() * std::sqrt(a) - z0.cast<double>() * std::sqrt(1.0 - a)).cast<float>();
}

RowMatrixXf z0_from_v(const RowMatrixXf& zn, const RowMatrixXf& v, int n, const NoiseSchedule& sched) {
    check_same(zn, v, "z0_from_v");
    const double a = sched.at(n);
    return (zn.cast<double>() * std::sqrt(a) - v.cast<double>() * std::sqrt(1.0 - a)).cast<float>();
}

RowMatrixXf eps_from_v(const RowMatrixXf& zn, const RowMatrixXf& v, int n, const NoiseSchedule& sched) {
    check_same(zn, v, "eps_from_v");
    const double a = sched.at(n);
    return (v.cast<double>() * std::sqrt(a) + zn.cast<double>() * std::sqrt(1.0 - a)).cast<float>();
}

RowMatrixXf gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    RowMatrixXf out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = g(rng);
    return out;
}

// ---- latent coder -------------------------------------------------------------

RowMatrixXf LatentCoder::blocks(const RowMatrixXf& mel) const {
    const int bt = spec_.block_t, bf = spec_.block_f;
    if (mel.rows() % bt != 0 || mel.cols() % bf != 0)
        throw ShapeError("latent coder: mel " + std::to_string(mel.rows()) + "x" + std::to_string(mel.cols()) +
                         " is not divisible into " + std::to_string(bt) + "x" + std::to_string(bf) + " blocks");
    const Eigen::Index gt = mel.rows() / bt, gf = mel.cols() / bf;
    RowMatrixXf out(gt * gf, bt * bf);
    for (Eigen::Index i = 0; i < gt; ++i)
        for (Eigen::Index j = 0; j < gf; ++j)
            Eigen::Map<RowMatrixXf>(out.row(i * gf + j).data(), bt, bf) = mel.block(i * bt, j * bf, bt, bf);
    return out;
}

LatentCoder LatentCoder::fit(const std::vector<RowMatrixXf>& mels, const LatentCoderSpec& spec) {
    if (mels.empty()) throw EmptyInputError("latent coder: no training mels");
    if (spec.block_t < 1 || spec.block_f < 1 || spec.dz < 1 || spec.dz > spec.block_t * spec.block_f)
        throw ConfigError("latent coder: invalid block geometry");
    LatentCoder c;
    c.spec_ = spec;

    double sum = 0.0, sq = 0.0, count = 0.0;
    for (const auto& m : mels) {
        sum += m.cast<double>().sum();
        sq += m.cast<double>().squaredNorm();
        count += static_cast<double>(m.size());
    }
    const double mean = sum / count;
    c.mel_mean_ = static_cast<float>(mean);
    c.mel_std_ = static_cast<float>(std::sqrt(std::max(sq / count - mean * mean, 1e-12)));

    const int dim = spec.block_t * spec.block_f;
    Eigen::RowVectorXd bsum = Eigen::RowVectorXd::Zero(dim);
    Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(dim, dim);
    double nblocks = 0.0;
    for (const auto& m : mels) {
        const RowMatrixXd b = ((c.blocks(m).array() - c.mel_mean_) / c.mel_std_).matrix().cast<double>();
        bsum += b.colwise().sum();
        scatter.noalias() += b.transpose() * b;
        nblocks += static_cast<double>(b.rows());
    }
    const Eigen::RowVectorXd bmean = bsum / nblocks;
    const Eigen::MatrixXd cov = scatter / nblocks - bmean.transpose() * bmean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    c.block_mean_ = bmean.cast<float>();
    c.basis_.resize(dim, spec.dz);
    c.scales_.resize(spec.dz);
    for (int k = 0; k < spec.dz; ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(dim - 1 - k);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        c.basis_.col(k) = v.cast<float>();
        c.scales_[k] = static_cast<float>(std::sqrt(std::max(eig.eigenvalues()[dim - 1 - k], 1e-12)));
    }

    double err = 0.0;
    for (const auto& m : mels) err += c.reconstruction_mse(m);
    c.train_mse_ = err / static_cast<double>(mels.size());
    return c;
}

RowMatrixXf LatentCoder::encode(const RowMatrixXf& mel) const {
    if (!fitted()) throw StateError("latent coder is not fitted");
    const RowMatrixXf b = ((blocks(mel).array() - mel_mean_) / mel_std_).matrix();
    const RowMatrixXf centred = b.rowwise() - block_mean_;
    return ((centred * basis_).array().rowwise() / scales_.array()).matrix();
}

RowMatrixXf LatentCoder::decode(const RowMatrixXf& z, Eigen::Index frames, Eigen::Index bins) const {
    if (!fitted()) throw StateError("latent coder is not fitted");
    const int bt = spec_.block_t, bf = spec_.block_f;
    if (frames % bt != 0 || bins % bf != 0 || z.cols() != spec_.dz || z.rows() != (frames / bt) * (bins / bf))
        throw ShapeError("latent coder: latent shape does not match the requested mel shape");
    const RowMatrixXf b =
        (((z.array().rowwise() * scales_.array()).matrix() * basis_.transpose()).rowwise() + block_mean_).array() *
            mel_std_ +
        mel_mean_;
    const Eigen::Index gf = bins / bf;
    RowMatrixXf mel(frames, bins);
    for (Eigen::Index r = 0; r < b.rows(); ++r)
        mel.block((r / gf) * bt, (r % gf) * bf, bt, bf) = Eigen::Map<const RowMatrixXf>(b.row(r).data(), bt, bf);
    return mel;
}

double LatentCoder::reconstruction_mse(const RowMatrixXf& mel) const {
    const RowMatrixXf rec = decode(encode(mel), mel.rows(), mel.cols());
    return (rec - mel).cast<double>().squaredNorm() / static_cast<double>(mel.size());
}

std::vector<float> LatentCoder::parameters() const {
    std::vector<float> out{mel_mean_, mel_std_, static_cast<float>(train_mse_)};
    out.insert(out.end(), block_mean_.data(), block_mean_.data() + block_mean_.size());
    out.insert(out.end(), basis_.data(), basis_.data() + basis_.size());
    out.insert(out.end(), scales_.data(), scales_.data() + scales_.size());
    return out;
}

LatentCoder LatentCoder::from_parameters(const LatentCoderSpec& spec, std::span<const float> values) {
    const std::size_t dim = static_cast<std::size_t>(spec.block_t * spec.block_f);
    const std::size_t dz = static_cast<std::size_t>(spec.dz);
    if (values.size() != 3 + dim + dim * dz + dz) throw FormatError("latent coder: parameter count mismatch");
    LatentCoder c;
    c.spec_ = spec;
    c.mel_mean_ = values[0];
    c.mel_std_ = values[1];
    c.train_mse_ = values[2];
    std::size_t o = 3;
    c.block_mean_ = Eigen::Map<const Eigen::RowVectorXf>(values.data() + o, static_cast<Eigen::Index>(dim));
    o += dim;
    c.basis_ = Eigen::Map<const RowMatrixXf>(values.data() + o, static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dz));
    o += dim * dz;
    c.scales_ = Eigen::Map<const Eigen::RowVectorXf>(values.data() + o, static_cast<Eigen::Index>(dz));
    return c;
}

RowMatrixXf latent_to_tokens(const RowMatrixXf& z, int blocks_per_token) {
    if (blocks_per_token < 1 || z.rows() % blocks_per_token != 0)
        throw ShapeError("latent_to_tokens: block count not divisible by blocks per token");
    return Eigen::Map<const RowMatrixXf>(z.data(), z.rows() / blocks_per_token, z.cols() * blocks_per_token);
}

RowMatrixXf tokens_to_latent(const RowMatrixXf& tokens, int dz) {
    if (dz < 1 || tokens.cols() % dz != 0) throw ShapeError("tokens_to_latent: token width not divisible by dz");
    return Eigen::Map<const RowMatrixXf>(tokens.data(), tokens.rows() * (tokens.cols() / dz), dz);
}

// ---- denoiser -------------------------------------------------------------------

void CFGConfig::validate() const {
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("cfg: p_drop must be in [0, 1)");
    if (!std::isfinite(w)) throw ConfigError("cfg: guidance scale must be finite");
}

RowMatrixXf guided_velocity(const RowMatrixXf& v_cond, const RowMatrixXf& v_uncond, const CFGConfig& cfg) {
    check_same(v_cond, v_uncond, "guided_velocity");
    const auto w = static_cast<float>(cfg.w);
    if (cfg.literal_form) return (1.0f - w) * v_cond + w * v_uncond;
    return w * v_cond + (1.0f - w) * v_uncond;
}

Denoiser::Denoiser(const DenoiserSpec& spec) : spec_(spec) {
    using nn::Activation;
    const int c = spec.channels;
    if (spec.token_dim < 1 || spec.cond_dim < 1 || c < 1 || spec.blocks < 0 || spec.heads < 1 || c % spec.heads != 0)
        throw ConfigError("denoiser: invalid dimensions");
    in_ = nn::Dense<float>("denoiser.in", {spec.token_dim, c, Activation::none});
    cond_ = nn::Dense<float>("denoiser.cond", {spec.cond_dim, c, Activation::none});
    time1_ = nn::Dense<float>("denoiser.time1", {c, c, Activation::silu});
    time2_ = nn::Dense<float>("denoiser.time2", {c, c, Activation::none});
    for (int b = 0; b < spec.blocks; ++b) {
        const std::string p = "denoiser.block" + std::to_string(b);
        norm_attn_.emplace_back(p + ".norm_attn", nn::LayerNormSpec{c});
        attn_.emplace_back(p + ".attn", nn::CrossAttentionSpec{c, c, spec.heads, c});
        norm_mlp_.emplace_back(p + ".norm_mlp", nn::LayerNormSpec{c});
        mlp1_.emplace_back(p + ".mlp1", nn::DenseSpec{c, 2 * c, Activation::silu});
        mlp2_.emplace_back(p + ".mlp2", nn::DenseSpec{2 * c, c, Activation::none});
    }
    norm_out_ = nn::LayerNorm<float>("denoiser.norm_out", {c});
    out_ = nn::Dense<float>("denoiser.out", {c, spec.token_dim, Activation::none});
}

void Denoiser::init(nn::ParamStore<float>& store, Rng& rng) const {
    in_.init(store, rng);
    cond_.init(store, rng);
    time1_.init(store, rng);
    time2_.init(store, rng);
    for (int b = 0; b < spec_.blocks; ++b) {
        norm_attn_[static_cast<std::size_t>(b)].init(store);
        attn_[static_cast<std::size_t>(b)].init(store, rng);
        norm_mlp_[static_cast<std::size_t>(b)].init(store);
        mlp1_[static_cast<std::size_t>(b)].init(store, rng);
        mlp2_[static_cast<std::size_t>(b)].init(store, rng);
    }
    norm_out_.init(store);
    out_.init(store, rng);
    store.create("denoiser.null", gaussian(1, spec_.cond_dim, rng) * 0.1f);
}

nn::Var Denoiser::null_condition(nn::Tape<float>& tape, nn::ParamStore<float>& store, Eigen::Index rows) const {
    return nn::repeat_rows(tape, tape.param(store.get("denoiser.null")), rows);
}

nn::Var Denoiser::forward(nn::Tape<float>& tape, nn::ParamStore<float>& store, nn::Var z_n,
                          const std::vector<int>& steps, nn::Var cond, int batch) const {
    const Eigen::Index rows = tape.value(z_n).rows();
    if (batch < 1 || rows % batch != 0 || static_cast<int>(steps.size()) != batch)
        throw ShapeError("denoiser: batch layout mismatch");
    if (tape.value(cond).rows() != rows || tape.value(cond).cols() != spec_.cond_dim)
        throw ShapeError("denoiser: condition must be " + std::to_string(rows) + "x" + std::to_string(spec_.cond_dim));
    const Eigen::Index len = rows / batch;
    const int c = spec_.channels;

    const RowMatrixXf pe = nn::sinusoidal_embedding<float>(len, spec_.cond_dim);
    RowMatrixXf pe_all(rows, spec_.cond_dim);
    RowMatrixXf temb(batch, c);
    for (int b = 0; b < batch; ++b) {
        pe_all.middleRows(b * len, len) = pe;
        for (int i = 0; i < c; ++i) {
            const double freq = std::pow(10000.0, -2.0 * (i / 2) / c);
            const double angle = steps[static_cast<std::size_t>(b)] * freq;
            temb(b, i) = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    const nn::Var ctx = cond_(tape, store, nn::add(tape, cond, tape.constant(std::move(pe_all))));
    const nn::Var t = time2_(tape, store, time1_(tape, store, tape.constant(std::move(temb))));
    nn::Var h = nn::add(tape, nn::add(tape, in_(tape, store, z_n), ctx), nn::repeat_rows(tape, t, len));
    for (std::size_t b = 0; b < attn_.size(); ++b) {
        h = nn::add(tape, h, attn_[b](tape, store, norm_attn_[b](tape, store, h), ctx, batch));
        h = nn::add(tape, h, mlp2_[b](tape, store, mlp1_[b](tape, store, norm_mlp_[b](tape, store, h))));
    }
    return out_(tape, store, norm_out_(tape, store, h));
}

RowMatrixXf Denoiser::predict(const nn::ParamStore<float>& store, const RowMatrixXf& z_n, int step,
                              const RowMatrixXf* cond) const {
    nn::Tape<float> tape(false);
    auto& s = const_cast<nn::ParamStore<float>&>(store);
    const nn::Var c = cond ? tape.constant(*cond) : null_condition(tape, s, z_n.rows());
    return tape.value(forward(tape, s, tape.constant(z_n), {step}, c, 1));
}

std::vector<int> ddim_timesteps(int n_steps, int sample_steps) {
    if (sample_steps < 1) throw ConfigError("DDIM needs at least one sampling step");
    if (sample_steps > n_steps) throw ConfigError("DDIM steps exceed the schedule length");
    std::vector<int> out;
    for (int i = 0; i < sample_steps; ++i) {
        const int t = static_cast<int>(std::lround(n_steps - static_cast<double>(i) * n_steps / sample_steps));
        out.push_back(t);
    }
    return out;
}

RowMatrixXf ddim_sample(const NoiseSchedule& sched, int sample_steps, const VelocityFn& velocity, const CFGConfig& cfg,
                        std::uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
    const auto ts = ddim_timesteps(sched.steps(), sample_steps);
    Rng rng(splitmix64(seed ^ 0xdd1full));
    RowMatrixXf z = gaussian(rows, cols, rng);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int n = ts[i];
        const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        RowMatrixXf v;
        if (cfg.w == 1.0 && !cfg.literal_form)
            v = velocity(z, n, true);
        else
            v = guided_velocity(velocity(z, n, true), velocity(z, n, false), cfg);
        const double a = sched.at(n), ap = sched.at(prev);
        const RowMatrixXd zd = z.cast<double>(), vd = v.cast<double>();
        const RowMatrixXd z0 = std::sqrt(a) * zd - std::sqrt(1.0 - a) * vd;
        const RowMatrixXd eps = std::sqrt(a) * vd + std::sqrt(1.0 - a) * zd;
        z = (std::sqrt(ap) * z0 + std::sqrt(1.0 - ap) * eps).cast<float>();
    }
    return z;
}

RowMatrixXf ddim_sample(const NoiseSchedule& sched, int sample_steps, const Denoiser& model,
                        const nn::ParamStore<float>& store, const RowMatrixXf& cond, const CFGConfig& cfg,
                        std::uint64_t seed) {
    const VelocityFn fn = [&](const RowMatrixXf& z, int n, bool conditional) {
        return model.predict(store, z, n, conditional ? &cond : nullptr);
    };
    return ddim_sample(sched, sample_steps, fn, cfg, seed, cond.rows(), model.spec().token_dim);
}

}  // namespace smc
