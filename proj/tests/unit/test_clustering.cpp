#include "doctest.h"
#include "smc/clustering.hpp"

#include <filesystem>

using namespace smc;

namespace {

// Exhaustive best 2-partition of a small 1-D set: returns sorted centroids.
std::pair<double, double> brute_force_two_means(const std::vector<double>& x) {
    double best = std::numeric_limits<double>::infinity();
    std::pair<double, double> out;
    const int n = static_cast<int>(x.size());
    for (int mask = 1; mask < (1 << n) - 1; ++mask) {
        double s0 = 0, s1 = 0;
        int c0 = 0, c1 = 0;
        for (int i = 0; i < n; ++i)
            if (mask >> i & 1) s0 += x[static_cast<std::size_t>(i)], ++c0;
            else s1 += x[static_cast<std::size_t>(i)], ++c1;
        const double m0 = s0 / c0, m1 = s1 / c1;
        double cost = 0;
        for (int i = 0; i < n; ++i) {
            const double m = (mask >> i & 1) ? m0 : m1;
            cost += (x[static_cast<std::size_t>(i)] - m) * (x[static_cast<std::size_t>(i)] - m);
        }
        if (cost < best) {
            best = cost;
            out = {std::min(m0, m1), std::max(m0, m1)};
        }
    }
    return out;
}

RowMatrixXf blobs(int per_blob, int blobs, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    RowMatrixXf x(per_blob * blobs, dim);
    for (int b = 0; b < blobs; ++b)
        for (int i = 0; i < per_blob; ++i)
            for (int d = 0; d < dim; ++d) x(b * per_blob + i, d) = g(rng) * 0.3f + static_cast<float>(((b * 7 + d * 3) % 11) * 2);
    return x;
}

}  // namespace

TEST_CASE("two clusters on a line match the exhaustive optimum") {
    RowMatrixXd pts(4, 1);
    pts << 0.0, 0.1, 10.0, 10.1;
    const auto oracle = brute_force_two_means({0.0, 0.1, 10.0, 10.1});
    CHECK(oracle.first == doctest::Approx(0.05));
    CHECK(oracle.second == doctest::Approx(10.05));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto cb = kmeans_fit(pts, {2, 100, 1e-4, seed});
        const float lo = std::min(cb.centroids(0, 0), cb.centroids(1, 0));
        const float hi = std::max(cb.centroids(0, 0), cb.centroids(1, 0));
        CHECK(lo == doctest::Approx(oracle.first).epsilon(1e-6));
        CHECK(hi == doctest::Approx(oracle.second).epsilon(1e-6));
    }
}

TEST_CASE("k equal to the number of points reproduces the points") {
    const RowMatrixXf pts = blobs(1, 6, 3, 4);
    const auto cb = kmeans_fit(pts, {6, 10, 1e-4, 1});
    CHECK(cb.inertia_history.back() == doctest::Approx(0.0));
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        double best = 1e9;
        for (Eigen::Index j = 0; j < cb.centroids.rows(); ++j) best = std::min(best, static_cast<double>((cb.centroids.row(j) - pts.row(i)).squaredNorm()));
        CHECK(best < 1e-10);
    }
}

TEST_CASE("inertia never increases and fits are deterministic") {
    const RowMatrixXf pts = blobs(50, 8, 4, 9);
    const auto a = kmeans_fit(pts, {8, 50, 0.0, 3});
    for (std::size_t i = 1; i < a.inertia_history.size(); ++i)
        CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] * (1 + 1e-9));
    CHECK(kmeans_fit(pts, {8, 50, 0.0, 3}).centroids == a.centroids);
}

TEST_CASE("k-means rejects impossible requests") {
    const RowMatrixXf pts = blobs(2, 1, 2, 1);
    CHECK_THROWS_AS(kmeans_fit(pts, {3, 10, 1e-4, 0}), ConfigError);
    CHECK_THROWS_AS(kmeans_fit(pts, {0, 10, 1e-4, 0}), ConfigError);
    RowMatrixXf bad = pts;
    bad(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(kmeans_fit(bad, {1, 10, 1e-4, 0}), NumericError);
}

TEST_CASE("ensemble merge order and domain lookup") {
    Codebook speech{RowMatrixXf::Constant(1024, 2, 1.0f), Domain::speech_like, {}};
    Codebook music{RowMatrixXf::Constant(1024, 2, 2.0f), Domain::music_like, {}};
    Codebook general{RowMatrixXf::Constant(2048, 2, 3.0f), Domain::general, {}};
    const auto e = merge_ensemble(speech, music, general);
    CHECK(e.size() == 4096);
    CHECK(e.domain_of(0) == Domain::general);
    CHECK(e.domain_of(2047) == Domain::general);
    CHECK(e.domain_of(2048) == Domain::speech_like);
    CHECK(e.domain_of(3072) == Domain::music_like);
    CHECK(e.centroids(2048, 0) == 1.0f);
    CHECK(e.centroids(4095, 0) == 2.0f);
    CHECK_THROWS_AS(e.domain_of(4096), ConfigError);
    Codebook small{RowMatrixXf::Zero(100, 2), Domain::general, {}};
    CHECK_THROWS_AS(merge_ensemble(speech, music, small), ConfigError);
}

TEST_CASE("codebook family sizes, ratio, determinism and file roundtrip") {
    std::array<RowMatrixXf, kNumDomains> per;
    for (int d = 0; d < kNumDomains; ++d) per[static_cast<std::size_t>(d)] = blobs(40, 10, 4, 20 + static_cast<std::uint64_t>(d));
    FamilyOptions opt;
    opt.base_size = 16;
    opt.embed_dim = 4;
    opt.max_iters = 20;
    opt.seed = 8;
    const auto fam = build_family(per, opt);
    CHECK(fam.sizes() == std::vector<int>{16, 32, 64, 128});
    for (const auto& e : fam.ensembles) {
        REQUIRE(e.sources.size() == 3);
        CHECK(e.sources[0].domain == Domain::general);
        CHECK(e.sources[0].count == 2 * e.sources[1].count);
        CHECK(e.sources[1].count == e.sources[2].count);
    }
    CHECK(build_family(per, opt).by_size(64).centroids == fam.by_size(64).centroids);
    CHECK_THROWS_AS(fam.by_size(48), ConfigError);

    const auto path = (std::filesystem::temp_directory_path() / "smc_family.smck").string();
    save_family(path, fam);
    const auto back = load_family(path);
    std::filesystem::remove(path);
    CHECK(back.stack == 1);
    CHECK(back.embed_dim == 4);
    for (int n : fam.sizes()) {
        CHECK(back.by_size(n).centroids == fam.by_size(n).centroids);
        CHECK(back.by_size(n).domain_of(n - 1) == Domain::music_like);
    }
    auto bytes = serialize_family(fam);
    bytes[30] ^= 4;
    CHECK_THROWS_AS(deserialize_family(bytes), CorruptionError);
}
