#pragma once

#include "smc/clustering.hpp"
#include "smc/features.hpp"
#include "smc/nn.hpp"

namespace smc {

// Exact nearest codebook row per input row using direct squared differences;
// ties go to the lowest index.
std::vector<int> nearest_indices(const RowMatrixXf& x, const RowMatrixXf& codebook);

struct SemanticQuantization {
    std::vector<int> tokens;  // length L/K, in [0, codebook_size)
    RowMatrixXf features;     // row i == centroid tokens[i]
    int codebook_size = 0;
};

SemanticQuantization semantic_quantize(const StackedFeatures& y, const EnsembleCodebook& cb);

// Learnable codebook updated by exponential moving averages.
struct AcousticVQ {
    RowMatrixXf codebook;       // N_a x D
    Eigen::VectorXd ema_size;   // N_a
    RowMatrixXd ema_sum;        // N_a x D
    double decay = 0.99;
    double eps = 1e-5;

    int size() const { return static_cast<int>(codebook.rows()); }
    int dim() const { return static_cast<int>(codebook.cols()); }
};

// Codebook of n rows; rows drawn from `seed_rows` (cycled in a seeded
// permutation) with EMA size 1, or zero when seed_rows is empty.
AcousticVQ make_acoustic_vq(int n, int dim, const RowMatrixXf& seed_rows, std::uint64_t seed, double decay = 0.99);

struct AcousticQuantization {
    std::vector<int> tokens;
    RowMatrixXf features;
};

AcousticQuantization acoustic_quantize(const RowMatrixXf& ya, const AcousticVQ& vq);

// sum_i ||a_i - b_i||^2
double commitment_loss(const RowMatrixXf& a, const RowMatrixXf& b);

// size <- g*size + (1-g)*count, sum <- g*sum + (1-g)*sum(assigned),
// centroid <- sum / (size + eps). With g == 1 nothing changes.
void ema_update(AcousticVQ& vq, const RowMatrixXf& ya, std::span<const int> assignments, double gamma);

// Fraction of codes used by a token sequence.
double codebook_usage(std::span<const int> tokens, int codebook_size);

struct AcousticEncoderSpec {
    int feature_dim = 64;  // K*E
    int hidden = 0;        // 0 -> 2 x input dim (4*K*E)
};

// BiLSTM over the concatenation [Y, E_s] followed by a linear projection back
// to K*E. Parameters live under "acoustic_encoder." in the store.
class AcousticEncoder {
public:
    AcousticEncoder() = default;
    explicit AcousticEncoder(const AcousticEncoderSpec& spec);

    void init(nn::ParamStore<float>& store, Rng& rng, bool zero = false) const;

    // y, e_s: (batch*T) x (K*E) on the tape; returns (batch*T) x (K*E).
    nn::Var forward(nn::Tape<float>& tape, nn::ParamStore<float>& store, nn::Var y, nn::Var e_s, int batch) const;

    RowMatrixXf run(const nn::ParamStore<float>& store, const RowMatrixXf& y, const RowMatrixXf& e_s) const;

    const AcousticEncoderSpec& spec() const { return spec_; }

private:
    AcousticEncoderSpec spec_;
    nn::BiRecurrent<float> rnn_;
    nn::Dense<float> proj_;
};

struct EncoderOutput {
    std::vector<int> tokens;  // [c_s..., c_a...] blockwise, length 2L/K
    RowMatrixXf features;     // (L/K) x 2KE, row = [E_s(i), E_a(i)]
    int semantic_size = 0;
    int acoustic_size = 0;

    std::size_t pairs() const { return tokens.size() / 2; }
    std::span<const int> semantic_tokens() const { return std::span<const int>(tokens).first(pairs()); }
    std::span<const int> acoustic_tokens() const { return std::span<const int>(tokens).last(pairs()); }
};

EncoderOutput encode(const StackedFeatures& y, const CodebookFamily& family, int semantic_size,
                     const AcousticEncoder& encoder, const nn::ParamStore<float>& store, const AcousticVQ& vq);

}  // namespace smc
