#include "smc/features.hpp"

#include <cmath>

namespace smc {

namespace {

constexpr std::uint32_t kFeatureVersion = 1;
// Fixed affine map bringing log-mel values (roughly [-11.5, 5.5]) near unit range.
constexpr float kInputOffset = -3.0f;
constexpr float kInputScale = 4.0f;

}  // namespace

SurrogateExtractor::SurrogateExtractor(int patch_dim, int embed_dim, std::uint64_t seed) : seed_(seed) {
    if (patch_dim < 1 || embed_dim < 2) throw ConfigError("extractor dimensions must be positive (E >= 2)");
    Rng rng(splitmix64(seed ^ 0x5eed'f00dull));
    std::normal_distribution<double> gauss(0.0, 1.0);
    weights_.resize(patch_dim, embed_dim);
    const double scale = 1.5 / std::sqrt(static_cast<double>(patch_dim));
    for (Eigen::Index i = 0; i < weights_.size(); ++i) weights_.data()[i] = static_cast<float>(scale * gauss(rng));
    bias_.resize(embed_dim);
    for (Eigen::Index j = 0; j < embed_dim; ++j) bias_[j] = static_cast<float>(0.5 * gauss(rng));
}

FeatureSequence SurrogateExtractor::extract(const PatchGrid& patches) const {
    if (patches.patches.cols() != weights_.rows())
        throw ShapeError("extractor expects " + std::to_string(weights_.rows()) + "-dim patches, got " +
                         std::to_string(patches.patches.cols()));
    const RowMatrixXd x = ((patches.patches.array() - kInputOffset) / kInputScale).matrix().cast<double>();
    RowMatrixXd h = (x * weights_.cast<double>()).rowwise() + bias_.cast<double>();
    h = h.array().tanh().matrix();
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        auto row = h.row(i);
        row.array() -= row.mean();
        const double var = row.squaredNorm() / static_cast<double>(row.size());
        row /= std::sqrt(var + 1e-20);
    }
    return {h.cast<float>()};
}

FeatureSequence surrogate_extract(const PatchGrid& patches, std::uint64_t seed, int embed_dim) {
    const int dim = patches.patch * patches.patch;
    return SurrogateExtractor(dim, embed_dim, seed).extract(patches);
}

std::vector<std::uint8_t> serialize_features(const FeatureSequence& f) {
    ByteWriter w;
    w.bytes("SMCF");
    w.u32(kFeatureVersion);
    w.u32(static_cast<std::uint32_t>(f.length()));
    w.u32(static_cast<std::uint32_t>(f.dim()));
    for (Eigen::Index i = 0; i < f.vectors.size(); ++i) w.f32(f.vectors.data()[i]);
    w.crc_trailer();
    return w.take();
}

FeatureSequence deserialize_features(std::span<const std::uint8_t> bytes, int expected_dim) {
    try {
        ByteReader header(bytes);
        if (header.str(4) != "SMCF") throw FormatError("feature file: bad magic");
        if (header.u32() != kFeatureVersion) throw VersionError("feature file: unsupported version");
        const std::uint32_t length = header.u32();
        const std::uint32_t dim = header.u32();
        const std::size_t expected = 16 + 4ull * length * dim + 4;
        if (bytes.size() != expected) throw LengthError("feature file: size does not match header shape");
        verify_crc_trailer(bytes);
        if (expected_dim >= 0 && static_cast<int>(dim) != expected_dim)
            throw ConfigError("feature file: E=" + std::to_string(dim) + " but codec expects " +
                              std::to_string(expected_dim));
        FeatureSequence f;
        f.vectors.resize(length, dim);
        for (Eigen::Index i = 0; i < f.vectors.size(); ++i) f.vectors.data()[i] = header.f32();
        if (!f.vectors.allFinite()) throw FormatError("feature file: non-finite entries");
        return f;
    } catch (const LengthError& e) {
        throw FormatError(std::string("feature file: truncated (") + e.what() + ")");
    }
}

void export_features(const std::string& path, const FeatureSequence& f) { write_file(path, serialize_features(f)); }

FeatureSequence import_features(const std::string& path, int expected_dim) {
    return deserialize_features(read_file(path), expected_dim);
}

StackedFeatures stack(const FeatureSequence& f, int k) {
    if (k < 1 || f.length() % k != 0)
        throw ShapeError("stack: L=" + std::to_string(f.length()) + " is not divisible by K=" + std::to_string(k));
    StackedFeatures out;
    out.stack = k;
    // Row-major storage makes stacking a reshape.
    out.vectors = Eigen::Map<const RowMatrixXf>(f.vectors.data(), f.length() / k, f.dim() * k);
    return out;
}

FeatureSequence unstack(const StackedFeatures& s) {
    const Eigen::Index dim = s.vectors.cols() / s.stack;
    return {Eigen::Map<const RowMatrixXf>(s.vectors.data(), s.vectors.rows() * s.stack, dim)};
}

}  // namespace smc
