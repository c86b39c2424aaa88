#include "smc/clustering.hpp"

#include <numeric>

namespace smc {

namespace {

constexpr std::uint32_t kCodebookVersion = 1;

RowMatrixXd subsample(const RowMatrixXf& points, Eigen::Index cap, std::uint64_t seed) {
    if (cap <= 0 || points.rows() <= cap) return points.cast<double>();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(points.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(splitmix64(seed));
    for (std::size_t i = 0; i < static_cast<std::size_t>(cap); ++i) {
        const auto j = std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng);
        std::swap(idx[i], idx[j]);
    }
    std::sort(idx.begin(), idx.begin() + cap);
    RowMatrixXd out(cap, points.cols());
    for (Eigen::Index i = 0; i < cap; ++i) out.row(i) = points.row(idx[static_cast<std::size_t>(i)]).cast<double>();
    return out;
}

}  // namespace

Domain EnsembleCodebook::domain_of(int index) const {
    for (const auto& s : sources)
        if (index >= s.offset && index < s.offset + s.count) return s.domain;
    throw ConfigError("ensemble index " + std::to_string(index) + " out of range");
}

EnsembleCodebook merge_ensemble(const Codebook& speech, const Codebook& music, const Codebook& general) {
    if (speech.dim() != music.dim() || speech.dim() != general.dim())
        throw ConfigError("merge_ensemble: codebook dimensions differ");
    if (general.size() != 2 * speech.size() || general.size() != 2 * music.size())
        throw ConfigError("merge_ensemble: sizes must satisfy general = 2 x speech = 2 x music");
    EnsembleCodebook out;
    out.centroids.resize(general.size() + speech.size() + music.size(), general.dim());
    int offset = 0;
    for (const auto* cb : {&general, &speech, &music}) {
        out.centroids.middleRows(offset, cb->size()) = cb->centroids;
        out.sources.push_back({cb->domain, offset, cb->size()});
        offset += cb->size();
    }
    return out;
}

std::vector<int> CodebookFamily::sizes() const {
    std::vector<int> out;
    for (const auto& e : ensembles) out.push_back(e.size());
    return out;
}

const EnsembleCodebook& CodebookFamily::by_size(int n) const {
    for (const auto& e : ensembles)
        if (e.size() == n) return e;
    throw ConfigError("codebook family has no ensemble of size " + std::to_string(n));
}

CodebookFamily build_family(const std::array<RowMatrixXf, kNumDomains>& per_domain, const FamilyOptions& opt) {
    if (opt.base_size < 4 || opt.base_size % 4 != 0) throw ConfigError("family base size must be a multiple of 4");
    const int dim = opt.stack * opt.embed_dim;
    for (const auto& p : per_domain)
        if (p.cols() != dim) throw ShapeError("build_family: feature dim does not match K*E");

    std::array<RowMatrixXd, kNumDomains> data;
    for (int d = 0; d < kNumDomains; ++d)
        data[static_cast<std::size_t>(d)] = subsample(per_domain[static_cast<std::size_t>(d)], opt.max_points,
                                                      opt.seed ^ (0x100ull + static_cast<std::uint64_t>(d)));

    CodebookFamily family;
    family.stack = opt.stack;
    family.embed_dim = opt.embed_dim;
    family.ensembles.resize(4);
    parallel_for(4, [&](std::size_t level) {
        const int total = opt.base_size << level;
        std::array<Codebook, kNumDomains> books;
        for (int d = 0; d < kNumDomains; ++d) {
            const auto domain = static_cast<Domain>(d);
            KMeansOptions km;
            km.k = domain == Domain::general ? total / 2 : total / 4;
            km.max_iters = opt.max_iters;
            km.tol = opt.tol;
            km.seed = splitmix64(opt.seed ^ (level << 8) ^ static_cast<std::uint64_t>(d));
            books[static_cast<std::size_t>(d)] = kmeans_fit(data[static_cast<std::size_t>(d)], km);
            books[static_cast<std::size_t>(d)].domain = domain;
        }
        family.ensembles[level] = merge_ensemble(books[0], books[1], books[2]);
    });
    return family;
}

std::vector<std::uint8_t> serialize_family(const CodebookFamily& family) {
    ByteWriter w;
    w.bytes("SMCK");
    w.u32(kCodebookVersion);
    w.u32(static_cast<std::uint32_t>(family.stack));
    w.u32(static_cast<std::uint32_t>(family.embed_dim));
    std::uint32_t sections = 0;
    for (const auto& e : family.ensembles) sections += static_cast<std::uint32_t>(e.sources.size());
    w.u32(sections);
    for (const auto& e : family.ensembles)
        for (const auto& s : e.sources) {
            w.u32(static_cast<std::uint32_t>(e.size()));
            w.u8(static_cast<std::uint8_t>(s.domain));
            w.u32(static_cast<std::uint32_t>(s.count));
            const auto block = e.centroids.middleRows(s.offset, s.count);
            for (Eigen::Index i = 0; i < block.rows(); ++i)
                for (Eigen::Index j = 0; j < block.cols(); ++j) w.f32(block(i, j));
        }
    w.crc_trailer();
    return w.take();
}

CodebookFamily deserialize_family(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader r(bytes);
        if (r.str(4) != "SMCK") throw FormatError("codebook file: bad magic");
        if (r.u32() != kCodebookVersion) throw VersionError("codebook file: unsupported version");
        const auto body = verify_crc_trailer(bytes);
        ByteReader in(body);
        in.str(8);
        CodebookFamily family;
        family.stack = static_cast<int>(in.u32());
        family.embed_dim = static_cast<int>(in.u32());
        const int dim = family.dim();
        if (family.stack < 1 || family.embed_dim < 1) throw FormatError("codebook file: invalid K or E");
        const std::uint32_t sections = in.u32();
        for (std::uint32_t s = 0; s < sections; ++s) {
            const auto total = static_cast<int>(in.u32());
            const auto tag = in.u8();
            if (tag >= kNumDomains) throw FormatError("codebook file: bad domain tag");
            const auto count = static_cast<int>(in.u32());
            in.require(4ull * static_cast<std::size_t>(count) * static_cast<std::size_t>(dim));
            Codebook cb;
            cb.domain = static_cast<Domain>(tag);
            cb.centroids.resize(count, dim);
            for (Eigen::Index i = 0; i < cb.centroids.size(); ++i) cb.centroids.data()[i] = in.f32();
            // Three consecutive sections form one ensemble.
            if (s % 3 == 0) family.ensembles.emplace_back();
            auto& e = family.ensembles.back();
            const int offset = e.size();
            e.centroids.conservativeResize(offset + count, dim);
            e.centroids.middleRows(offset, count) = cb.centroids;
            e.sources.push_back({cb.domain, offset, count});
            if (e.size() > total) throw FormatError("codebook file: section exceeds its ensemble size");
        }
        if (in.remaining() != 0) throw FormatError("codebook file: trailing bytes");
        if (sections % 3 != 0) throw FormatError("codebook file: incomplete ensemble");
        return family;
    } catch (const LengthError& e) {
        throw FormatError(std::string("codebook file: truncated (") + e.what() + ")");
    }
}

void save_family(const std::string& path, const CodebookFamily& family) { write_file(path, serialize_family(family)); }

CodebookFamily load_family(const std::string& path) { return deserialize_family(read_file(path)); }

}  // namespace smc
