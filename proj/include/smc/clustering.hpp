#pragma once

#include "smc/synthcorpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace smc {

struct Codebook {
    RowMatrixXf centroids;  // N x D
    Domain domain = Domain::general;
    // Inertia after every assignment step of the fit, in order.
    std::vector<double> inertia_history;

    int size() const { return static_cast<int>(centroids.rows()); }
    int dim() const { return static_cast<int>(centroids.cols()); }
};

struct KMeansOptions {
    int k = 8;
    int max_iters = 100;
    double tol = 1e-4;  // relative Frobenius shift of the centroid matrix
    std::uint64_t seed = 0;
};

// Sum of squared distances from each point to its assigned centroid.
template <class Derived, class DerivedC>
double inertia(const Eigen::MatrixBase<Derived>& points, const Eigen::MatrixBase<DerivedC>& centroids,
               std::span<const int> assignment) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        total += (points.row(i).template cast<double>() - centroids.row(assignment[static_cast<std::size_t>(i)]).template cast<double>())
                     .squaredNorm();
    return total;
}

namespace detail {

// Nearest centroid via the expanded form ||x||^2 - 2 x.c + ||c||^2 (one GEMM).
template <class Scalar>
void assign_gemm(const RowMatrix<Scalar>& points, const RowMatrix<Scalar>& centroids, std::vector<int>& assignment) {
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> cn = centroids.rowwise().squaredNorm();
    constexpr Eigen::Index kBlock = 4096;
    for (Eigen::Index start = 0; start < points.rows(); start += kBlock) {
        const Eigen::Index n = std::min(kBlock, points.rows() - start);
        const RowMatrix<Scalar> dots = points.middleRows(start, n) * centroids.transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            Scalar best_d = std::numeric_limits<Scalar>::infinity();
            for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
                const Scalar d = cn[j] - 2 * dots(i, j);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            assignment[static_cast<std::size_t>(start + i)] = static_cast<int>(best);
        }
    }
}

inline std::size_t sample_proportional(std::span<const double> weights, Rng& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0)) return weights.size();
    const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (acc > target && weights[i] > 0) return i;
    }
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0) return i;
    return weights.size();
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations. Empty clusters are re-seeded
// at the point farthest from its assigned centroid. Stops when the relative
// centroid shift drops below tol or after max_iters.
template <class Scalar>
Codebook kmeans_fit(const RowMatrix<Scalar>& points, const KMeansOptions& opt) {
    const Eigen::Index m = points.rows();
    const Eigen::Index d = points.cols();
    if (opt.k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (m < opt.k)
        throw ConfigError("kmeans: insufficient data, " + std::to_string(m) + " points for k=" + std::to_string(opt.k));
    if (!points.allFinite()) throw NumericError("kmeans: non-finite input points");

    Rng rng(splitmix64(opt.seed ^ 0x6b6d65616e73ull));
    RowMatrix<Scalar> centroids(opt.k, d);
    std::vector<double> closest(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
    std::vector<char> chosen(static_cast<std::size_t>(m), 0);
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, static_cast<std::size_t>(m) - 1)(rng);
    for (int c = 0; c < opt.k; ++c) {
        if (pick >= static_cast<std::size_t>(m))  // all remaining mass is zero: take the first unused point
            pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
        chosen[pick] = 1;
        centroids.row(c) = points.row(static_cast<Eigen::Index>(pick));
        for (Eigen::Index i = 0; i < m; ++i) {
            const double dist = (points.row(i) - centroids.row(c)).template cast<double>().squaredNorm();
            closest[static_cast<std::size_t>(i)] = std::min(closest[static_cast<std::size_t>(i)], dist);
        }
        if (c + 1 < opt.k) pick = detail::sample_proportional(closest, rng);
    }

    Codebook out;
    std::vector<int> assignment(static_cast<std::size_t>(m), 0);
    for (int iter = 0; iter < std::max(1, opt.max_iters); ++iter) {
        detail::assign_gemm(points, centroids, assignment);
        out.inertia_history.push_back(inertia(points, centroids, assignment));

        // Fixed-order reduction keeps the update deterministic.
        RowMatrixXd sums = RowMatrixXd::Zero(opt.k, d);
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(opt.k), 0);
        for (Eigen::Index i = 0; i < m; ++i) {
            const int a = assignment[static_cast<std::size_t>(i)];
            sums.row(a) += points.row(i).template cast<double>();
            ++counts[static_cast<std::size_t>(a)];
        }
        RowMatrix<Scalar> updated = centroids;
        std::vector<char> used(static_cast<std::size_t>(m), 0);
        for (int c = 0; c < opt.k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                updated.row(c) = (sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)])).template cast<Scalar>();
                continue;
            }
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (used[static_cast<std::size_t>(i)]) continue;
                const double dist =
                    (points.row(i) - centroids.row(assignment[static_cast<std::size_t>(i)])).template cast<double>().squaredNorm();
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            used[static_cast<std::size_t>(far)] = 1;
            updated.row(c) = points.row(far);
        }
        const double base = std::max(centroids.template cast<double>().norm(), 1e-12);
        const double shift = (updated - centroids).template cast<double>().norm() / base;
        centroids = std::move(updated);
        if (shift < opt.tol) {
            detail::assign_gemm(points, centroids, assignment);
            out.inertia_history.push_back(inertia(points, centroids, assignment));
            break;
        }
    }
    out.centroids = centroids.template cast<float>();
    return out;
}

struct EnsembleSource {
    Domain domain;
    int offset;
    int count;
};

// Per-domain codebooks concatenated as [general, speech, music].
struct EnsembleCodebook {
    RowMatrixXf centroids;
    std::vector<EnsembleSource> sources;

    int size() const { return static_cast<int>(centroids.rows()); }
    int dim() const { return static_cast<int>(centroids.cols()); }
    Domain domain_of(int index) const;
};

// Requires equal D and general.N = 2 speech.N = 2 music.N.
EnsembleCodebook merge_ensemble(const Codebook& speech, const Codebook& music, const Codebook& general);

// Ensembles at sizes S, 2S, 4S, 8S sharing one stack factor.
struct CodebookFamily {
    int stack = 1;
    int embed_dim = 64;
    std::vector<EnsembleCodebook> ensembles;

    std::vector<int> sizes() const;
    const EnsembleCodebook& by_size(int n) const;
    int dim() const { return stack * embed_dim; }
};

struct FamilyOptions {
    int base_size = 64;
    int stack = 1;
    int embed_dim = 64;
    std::uint64_t seed = 0;
    int max_iters = 100;
    double tol = 1e-4;
    // Points per domain are subsampled (deterministically) to this cap; 0 disables.
    Eigen::Index max_points = 20000;
};

// Fits 3 domains x 4 sizes and merges them into 4 ensembles. per_domain is
// indexed by Domain and holds stacked feature rows.
CodebookFamily build_family(const std::array<RowMatrixXf, kNumDomains>& per_domain, const FamilyOptions& opt);

// "SMCK", u32 version, u32 K, u32 E, u32 sections, then per section
// (u32 ensemble size, u8 domain, u32 N, N*K*E f32), CRC32.
std::vector<std::uint8_t> serialize_family(const CodebookFamily& family);
CodebookFamily deserialize_family(std::span<const std::uint8_t> bytes);
void save_family(const std::string& path, const CodebookFamily& family);
CodebookFamily load_family(const std::string& path);

}  // namespace smc
