#pragma once

#include "smc/spectral.hpp"

namespace smc {

// Per-patch embeddings, L x E.
struct FeatureSequence {
    RowMatrixXf vectors;

    Eigen::Index length() const { return vectors.rows(); }
    Eigen::Index dim() const { return vectors.cols(); }
};

// (L/K) x (K*E); row i concatenates input rows iK .. iK+K-1.
struct StackedFeatures {
    RowMatrixXf vectors;
    int stack = 1;
};

enum class ExtractorKind : std::uint8_t { surrogate = 0, imported = 1 };

// Frozen stand-in for a pretrained patch encoder: fixed-seed random projection
// P^2 -> E, tanh, then per-vector standardisation. Weights depend only on the seed.
class SurrogateExtractor {
public:
    SurrogateExtractor(int patch_dim, int embed_dim, std::uint64_t seed);

    FeatureSequence extract(const PatchGrid& patches) const;

    int patch_dim() const { return static_cast<int>(weights_.rows()); }
    int embed_dim() const { return static_cast<int>(weights_.cols()); }
    std::uint64_t seed() const { return seed_; }
    const RowMatrixXf& weights() const { return weights_; }
    const Eigen::RowVectorXf& bias() const { return bias_; }

private:
    RowMatrixXf weights_;  // patch_dim x embed_dim
    Eigen::RowVectorXf bias_;
    std::uint64_t seed_;
};

FeatureSequence surrogate_extract(const PatchGrid& patches, std::uint64_t seed, int embed_dim = 64);

// Tensor file: "SMCF", u32 version, u32 L, u32 E, L*E f32 LE, CRC32.
std::vector<std::uint8_t> serialize_features(const FeatureSequence& f);
FeatureSequence deserialize_features(std::span<const std::uint8_t> bytes, int expected_dim = -1);
void export_features(const std::string& path, const FeatureSequence& f);
// expected_dim < 0 skips the codec-config check.
FeatureSequence import_features(const std::string& path, int expected_dim = -1);

StackedFeatures stack(const FeatureSequence& f, int k);
FeatureSequence unstack(const StackedFeatures& s);

}  // namespace smc
