#include "doctest.h"
#include "smc/features.hpp"

#include <filesystem>

using namespace smc;

namespace {

PatchGrid random_grid(int t_patches, unsigned seed) {
    std::srand(seed);
    MelSpectrogram mel;
    mel.values = (RowMatrixXf::Random(t_patches * 16, 128).array() * 3.0f - 6.0f).matrix();
    return patchify(mel, 16);
}

}  // namespace

TEST_CASE("extractor output is deterministic and standardised") {
    const auto grid = random_grid(16, 1);
    const auto a = surrogate_extract(grid, 99);
    const auto b = surrogate_extract(grid, 99);
    CHECK(a.length() == 128);
    CHECK(a.dim() == 64);
    CHECK(a.vectors == b.vectors);
    CHECK(surrogate_extract(grid, 100).vectors != a.vectors);
    for (Eigen::Index i = 0; i < a.length(); ++i) {
        const auto row = a.vectors.row(i).cast<double>();
        const double mean = row.mean();
        const double var = (row.array() - mean).square().mean();
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("one changed mel pixel changes its patch embedding only") {
    auto grid = random_grid(2, 2);
    const auto before = surrogate_extract(grid, 5);
    grid.patches(3, 17) += 1.0f;
    const auto after = surrogate_extract(grid, 5);
    for (Eigen::Index i = 0; i < before.length(); ++i) {
        if (i == 3)
            CHECK(before.vectors.row(i) != after.vectors.row(i));
        else
            CHECK(before.vectors.row(i) == after.vectors.row(i));
    }
}

TEST_CASE("extractor rejects the wrong patch size") {
    SurrogateExtractor x(256, 64, 1);
    PatchGrid g;
    g.patches = RowMatrixXf::Zero(4, 64);
    CHECK_THROWS_AS(x.extract(g), ShapeError);
    CHECK_THROWS_AS(SurrogateExtractor(256, 1, 1), ConfigError);
}

TEST_CASE("feature files roundtrip and reject bad input") {
    FeatureSequence f{RowMatrixXf::Random(12, 64)};
    const auto bytes = serialize_features(f);
    CHECK(bytes.size() == 16 + 12 * 64 * 4 + 4);
    CHECK(deserialize_features(bytes).vectors == f.vectors);
    CHECK(deserialize_features(bytes, 64).vectors == f.vectors);
    CHECK_THROWS_AS(deserialize_features(bytes, 32), ConfigError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 9);
    CHECK_THROWS_AS(deserialize_features(truncated), FormatError);
    auto flipped = bytes;
    flipped[40] ^= 1;
    CHECK_THROWS_AS(deserialize_features(flipped), CorruptionError);

    const auto path = (std::filesystem::temp_directory_path() / "smc_features.smcf").string();
    export_features(path, f);
    CHECK(import_features(path, 64).vectors == f.vectors);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(import_features(path), IoError);
}

TEST_CASE("stacking concatenates consecutive rows") {
    FeatureSequence f{RowMatrixXf::Random(8, 3)};
    const auto s = stack(f, 2);
    CHECK(s.vectors.rows() == 4);
    CHECK(s.vectors.cols() == 6);
    CHECK(s.vectors.row(1).head(3) == f.vectors.row(2));
    CHECK(s.vectors.row(1).tail(3) == f.vectors.row(3));
    CHECK(unstack(s).vectors == f.vectors);
    CHECK(stack(f, 1).vectors == f.vectors);
    CHECK_THROWS_AS(stack(f, 3), ShapeError);
}
