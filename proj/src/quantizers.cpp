#include "smc/quantizers.hpp"

#include <limits>
#include <numeric>

namespace smc {

std::vector<int> nearest_indices(const RowMatrixXf& x, const RowMatrixXf& codebook) {
    if (x.cols() != codebook.cols())
        throw ShapeError("quantize: input dim " + std::to_string(x.cols()) + " != codebook dim " +
                         std::to_string(codebook.cols()));
    if (codebook.rows() == 0) throw ConfigError("quantize: empty codebook");
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
        const auto row = x.row(static_cast<Eigen::Index>(i));
        int best = 0;
        float best_d = std::numeric_limits<float>::infinity();
        for (Eigen::Index j = 0; j < codebook.rows(); ++j) {
            const float d = (row - codebook.row(j)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(j);
            }
        }
        out[i] = best;
    });
    return out;
}

SemanticQuantization semantic_quantize(const StackedFeatures& y, const EnsembleCodebook& cb) {
    SemanticQuantization q;
    q.tokens = nearest_indices(y.vectors, cb.centroids);
    q.codebook_size = cb.size();
    q.features.resize(y.vectors.rows(), cb.dim());
    for (Eigen::Index i = 0; i < q.features.rows(); ++i) q.features.row(i) = cb.centroids.row(q.tokens[static_cast<std::size_t>(i)]);
    return q;
}

AcousticVQ make_acoustic_vq(int n, int dim, const RowMatrixXf& seed_rows, std::uint64_t seed, double decay) {
    if (n < 1 || dim < 1) throw ConfigError("acoustic VQ: N_a and dim must be >= 1");
    AcousticVQ vq;
    vq.decay = decay;
    vq.codebook = RowMatrixXf::Zero(n, dim);
    vq.ema_size = Eigen::VectorXd::Zero(n);
    vq.ema_sum = RowMatrixXd::Zero(n, dim);
    if (seed_rows.rows() > 0) {
        if (seed_rows.cols() != dim) throw ShapeError("acoustic VQ: seed rows have the wrong dim");
        std::vector<Eigen::Index> order(static_cast<std::size_t>(seed_rows.rows()));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(splitmix64(seed ^ 0xac0u));
        std::shuffle(order.begin(), order.end(), rng);
        for (int j = 0; j < n; ++j) {
            vq.codebook.row(j) = seed_rows.row(order[static_cast<std::size_t>(j) % order.size()]);
            vq.ema_size[j] = 1.0;
            vq.ema_sum.row(j) = vq.codebook.row(j).cast<double>() * (1.0 + vq.eps);
        }
    }
    return vq;
}

AcousticQuantization acoustic_quantize(const RowMatrixXf& ya, const AcousticVQ& vq) {
    AcousticQuantization q;
    q.tokens = nearest_indices(ya, vq.codebook);
    q.features.resize(ya.rows(), vq.dim());
    for (Eigen::Index i = 0; i < ya.rows(); ++i) q.features.row(i) = vq.codebook.row(q.tokens[static_cast<std::size_t>(i)]);
    return q;
}

double commitment_loss(const RowMatrixXf& a, const RowMatrixXf& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("commitment_loss: shape mismatch");
    return (a.cast<double>() - b.cast<double>()).squaredNorm();
}

void ema_update(AcousticVQ& vq, const RowMatrixXf& ya, std::span<const int> assignments, double gamma) {
    if (ya.cols() != vq.dim() || static_cast<std::size_t>(ya.rows()) != assignments.size())
        throw ShapeError("ema_update: inputs do not match the codebook");
    if (gamma >= 1.0) return;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(vq.size());
    RowMatrixXd sums = RowMatrixXd::Zero(vq.size(), vq.dim());
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const int a = assignments[i];
        if (a < 0 || a >= vq.size()) throw ShapeError("ema_update: assignment out of range");
        counts[a] += 1.0;
        sums.row(a) += ya.row(static_cast<Eigen::Index>(i)).cast<double>();
    }
    vq.ema_size = gamma * vq.ema_size + (1.0 - gamma) * counts;
    vq.ema_sum = gamma * vq.ema_sum + (1.0 - gamma) * sums;
    for (int j = 0; j < vq.size(); ++j) vq.codebook.row(j) = (vq.ema_sum.row(j) / (vq.ema_size[j] + vq.eps)).cast<float>();
}

double codebook_usage(std::span<const int> tokens, int codebook_size) {
    if (codebook_size < 1) return 0.0;
    std::vector<char> seen(static_cast<std::size_t>(codebook_size), 0);
    for (int t : tokens)
        if (t >= 0 && t < codebook_size) seen[static_cast<std::size_t>(t)] = 1;
    return static_cast<double>(std::count(seen.begin(), seen.end(), 1)) / codebook_size;
}

AcousticEncoder::AcousticEncoder(const AcousticEncoderSpec& spec) : spec_(spec) {
    if (spec_.feature_dim < 1) throw ConfigError("acoustic encoder: feature dim must be >= 1");
    if (spec_.hidden == 0) spec_.hidden = 4 * spec_.feature_dim;
    rnn_ = nn::BiRecurrent<float>("acoustic_encoder.rnn", {2 * spec_.feature_dim, spec_.hidden});
    proj_ = nn::Dense<float>("acoustic_encoder.proj", {2 * spec_.hidden, spec_.feature_dim, nn::Activation::none});
}

void AcousticEncoder::init(nn::ParamStore<float>& store, Rng& rng, bool zero) const {
    rnn_.init(store, rng, zero);
    proj_.init(store, rng, zero);
}

nn::Var AcousticEncoder::forward(nn::Tape<float>& tape, nn::ParamStore<float>& store, nn::Var y, nn::Var e_s,
                                 int batch) const {
    const nn::Var x = nn::concat_cols(tape, {y, e_s});
    return proj_(tape, store, rnn_(tape, store, x, batch));
}

RowMatrixXf AcousticEncoder::run(const nn::ParamStore<float>& store, const RowMatrixXf& y, const RowMatrixXf& e_s) const {
    if (y.cols() != spec_.feature_dim || e_s.cols() != spec_.feature_dim || y.rows() != e_s.rows())
        throw ShapeError("acoustic encoder: expected two (T x " + std::to_string(spec_.feature_dim) + ") inputs");
    nn::Tape<float> tape(false);
    // Inference never writes to the store; the const_cast only satisfies the layer signature.
    auto& s = const_cast<nn::ParamStore<float>&>(store);
    return tape.value(forward(tape, s, tape.constant(y), tape.constant(e_s), 1));
}

EncoderOutput encode(const StackedFeatures& y, const CodebookFamily& family, int semantic_size,
                     const AcousticEncoder& encoder, const nn::ParamStore<float>& store, const AcousticVQ& vq) {
    const auto& cb = family.by_size(semantic_size);
    const auto sem = semantic_quantize(y, cb);
    const RowMatrixXf ya = encoder.run(store, y.vectors, sem.features);
    const auto ac = acoustic_quantize(ya, vq);

    EncoderOutput out;
    out.semantic_size = cb.size();
    out.acoustic_size = vq.size();
    out.tokens = sem.tokens;
    out.tokens.insert(out.tokens.end(), ac.tokens.begin(), ac.tokens.end());
    out.features.resize(y.vectors.rows(), sem.features.cols() + ac.features.cols());
    out.features << sem.features, ac.features;
    return out;
}

}  // namespace smc
