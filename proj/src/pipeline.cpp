#include "smc/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace smc {

namespace {

constexpr std::uint32_t kCheckpointVersion = 2;

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos, 0);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] != '-') {
            const unsigned long long x = std::stoull(v, &pos, 0);
            if (pos == v.size()) return x;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

struct Field {
    std::string key;
    std::function<std::string(const CodecConfig&)> get;
    std::function<void(CodecConfig&, const std::string&)> set;
};

template <class T, class Access>
Field field(std::string key, Access access) {
    Field f;
    f.key = key;
    f.get = [access](const CodecConfig& c) {
        const T& v = access(const_cast<CodecConfig&>(c));
        if constexpr (std::is_same_v<T, bool>)
            return std::string(v ? "true" : "false");
        else if constexpr (std::is_floating_point_v<T>)
            return fmt_double(v);
        else
            return std::to_string(v);
    };
    f.set = [access, key](CodecConfig& c, const std::string& s) {
        T& v = access(c);
        if constexpr (std::is_same_v<T, bool>)
            v = parse_bool(key, s);
        else if constexpr (std::is_floating_point_v<T>)
            v = parse_double(key, s);
        else if constexpr (std::is_same_v<T, std::uint64_t>)
            v = parse_u64(key, s);
        else
            v = static_cast<T>(parse_int(key, s));
    };
    return f;
}

#define SMC_FIELD(type, key, expr) field<type>(key, [](CodecConfig& c) -> type& { return c.expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        SMC_FIELD(int, "n_fft", spectral.n_fft),
        SMC_FIELD(int, "hop", spectral.hop),
        SMC_FIELD(int, "n_mels", spectral.n_mels),
        SMC_FIELD(double, "fmin", spectral.fmin),
        SMC_FIELD(double, "fmax", spectral.fmax),
        SMC_FIELD(double, "log_floor", spectral.log_floor),
        SMC_FIELD(int, "patch", spectral.patch),
        SMC_FIELD(int, "embed_dim", embed_dim),
        SMC_FIELD(int, "stack", stack),
        SMC_FIELD(std::uint64_t, "extractor_seed", extractor_seed),
        SMC_FIELD(int, "family_base", family_base),
        SMC_FIELD(int, "semantic_size", semantic_size),
        SMC_FIELD(int, "acoustic_size", acoustic_size),
        SMC_FIELD(int, "acoustic_hidden", acoustic_hidden),
        SMC_FIELD(double, "ema_decay", ema_decay),
        SMC_FIELD(double, "commit_weight", commit_weight),
        SMC_FIELD(int, "latent_block_t", latent.block_t),
        SMC_FIELD(int, "latent_block_f", latent.block_f),
        SMC_FIELD(int, "latent_dz", latent.dz),
        SMC_FIELD(int, "denoiser_channels", denoiser_channels),
        SMC_FIELD(int, "denoiser_heads", denoiser_heads),
        SMC_FIELD(int, "denoiser_blocks", denoiser_blocks),
        SMC_FIELD(int, "schedule_steps", schedule_steps),
        SMC_FIELD(int, "sample_steps", sample_steps),
        SMC_FIELD(double, "guidance", guidance),
        SMC_FIELD(double, "p_drop", p_drop),
        SMC_FIELD(bool, "literal_cfg", literal_cfg),
        SMC_FIELD(int, "griffin_lim_iters", griffin_lim_iters),
        SMC_FIELD(double, "window_s", window_s),
        SMC_FIELD(double, "overlap", overlap),
        SMC_FIELD(int, "train_steps", train_steps),
        SMC_FIELD(int, "batch", batch),
        SMC_FIELD(double, "lr", lr),
        SMC_FIELD(long, "warmup_steps", warmup_steps),
        SMC_FIELD(int, "log_every", log_every),
        SMC_FIELD(int, "eval_every", eval_every),
    };
    return all;
}

#undef SMC_FIELD

}  // namespace

void CodecConfig::validate() const {
    spectral.validate();
    if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
    const auto w = window();
    if ((w.samples / static_cast<std::size_t>(spectral.hop)) % static_cast<std::size_t>(spectral.patch) != 0 ||
        spectral.n_mels % spectral.patch != 0)
        throw ConfigError("window frames and mel bins must be divisible by the patch size");
    const int f_patches = spectral.n_mels / spectral.patch;
    const int patches = static_cast<int>(w.samples / static_cast<std::size_t>(spectral.hop)) / spectral.patch * f_patches;
    if (patches != w.patches)
        throw ConfigError("spectral geometry gives " + std::to_string(patches) + " patches per window, expected " +
                          std::to_string(w.patches));
    if (stack < 1 || f_patches % stack != 0) throw ConfigError("stack factor must divide the frequency patch count");
    if (family_base < 4 || family_base % 4 != 0) throw ConfigError("family_base must be a positive multiple of 4");
    const auto sizes = family_sizes();
    if (std::find(sizes.begin(), sizes.end(), semantic_size) == sizes.end())
        throw ConfigError("semantic_size " + std::to_string(semantic_size) + " is not in the codebook family");
    if (!power_of_two(family_base) || !power_of_two(acoustic_size))
        throw ConfigError("codebook sizes must be powers of two");
    if (!(ema_decay > 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must be in (0, 1]");
    if (latent.block_t != spectral.patch || 2 * latent.block_f != spectral.patch || latent.dz < 1)
        throw ConfigError("latent blocks must be patch x patch/2 so two blocks align with one patch");
    if (schedule_steps < 2) throw ConfigError("schedule_steps must be >= 2");
    if (sample_steps < 1 || sample_steps > schedule_steps) throw ConfigError("sample_steps must be in [1, schedule_steps]");
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("p_drop must be in [0, 1)");
    if (!(overlap >= 0.0 && overlap < 0.5)) throw ConfigError("overlap must be in [0, 0.5)");
    const double stride_pairs = pairs_per_window() * (1.0 - overlap);
    const int pairs_per_time_patch = f_patches / stack;
    if (std::abs(stride_pairs - std::round(stride_pairs)) > 1e-9 ||
        static_cast<long>(std::lround(stride_pairs)) % pairs_per_time_patch != 0)
        throw ConfigError("overlap must leave a whole number of time patches per stride");
    if (griffin_lim_iters < 1) throw ConfigError("griffin_lim_iters must be >= 1");
    if (batch < 1 || train_steps < 0 || log_every < 1 || eval_every < 1) throw ConfigError("invalid training schedule");
    if (!(lr > 0.0) || warmup_steps < 0) throw ConfigError("invalid learning rate schedule");
    if (denoiser_channels < 1 || denoiser_heads < 1 || denoiser_channels % denoiser_heads != 0)
        throw ConfigError("denoiser channels must be divisible by heads");
}

CodecConfig desk_config() {
    CodecConfig c;
    c.window_s = 2.56;
    c.family_base = 64;
    c.semantic_size = 512;
    c.acoustic_size = 256;
    c.acoustic_hidden = 64;
    c.lr = 1e-3;
    c.warmup_steps = 100;
    return c;
}

CodecConfig parse_config(std::string_view text, CodecConfig base) {
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string value = trim(std::string_view(t).substr(eq + 1));
        const auto& fs = fields();
        const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.key == key; });
        if (it == fs.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->set(base, value);
    }
    return base;
}

CodecConfig load_config(const std::string& path, CodecConfig base) {
    const auto bytes = read_file(path);
    return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), base);
}

std::string config_to_text(const CodecConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

void check_compatible(const CodecConfig& expected, const CodecConfig& actual) {
    auto mismatch = [](const std::string& what, const std::string& a, const std::string& b) {
        throw ConfigError("checkpoint " + what + "=" + b + " but configuration expects " + a);
    };
    if (expected.embed_dim != actual.embed_dim)
        mismatch("E", std::to_string(expected.embed_dim), std::to_string(actual.embed_dim));
    if (expected.stack != actual.stack) mismatch("K", std::to_string(expected.stack), std::to_string(actual.stack));
    if (expected.window_s != actual.window_s) mismatch("window_s", fmt_double(expected.window_s), fmt_double(actual.window_s));
    const auto& a = expected.spectral;
    const auto& b = actual.spectral;
    if (a.n_fft != b.n_fft || a.hop != b.hop || a.n_mels != b.n_mels || a.patch != b.patch || a.fmin != b.fmin ||
        a.fmax != b.fmax)
        throw ConfigError("checkpoint spectral geometry differs from the configuration");
    if (expected.latent.dz != actual.latent.dz) mismatch("latent_dz", std::to_string(expected.latent.dz), std::to_string(actual.latent.dz));
}

// ---- models ------------------------------------------------------------------

SurrogateExtractor CodecModels::extractor() const {
    return SurrogateExtractor(config.spectral.patch * config.spectral.patch, config.embed_dim, config.extractor_seed);
}

AcousticEncoder CodecModels::encoder() const {
    return AcousticEncoder({config.stack * config.embed_dim, config.acoustic_hidden});
}

Denoiser CodecModels::denoiser() const {
    DenoiserSpec s;
    s.token_dim = config.token_dim();
    s.cond_dim = config.cond_dim();
    s.channels = config.denoiser_channels;
    s.heads = config.denoiser_heads;
    s.blocks = config.denoiser_blocks;
    s.schedule_steps = config.schedule_steps;
    return Denoiser(s);
}

NoiseSchedule CodecModels::schedule() const { return build_schedule(config.schedule_steps); }

CodecModels initialise_models(const CodecConfig& cfg, CodebookFamily family, LatentCoder latent, std::uint64_t seed) {
    cfg.validate();
    if (family.stack != cfg.stack || family.embed_dim != cfg.embed_dim)
        throw ConfigError("codebook family K/E do not match the configuration");
    for (int n : cfg.family_sizes()) family.by_size(n);
    if (!latent.fitted()) throw StateError("latent coder must be fitted before codec initialisation");
    CodecModels m;
    m.config = cfg;
    m.family = std::move(family);
    m.latent = std::move(latent);
    Rng rng(splitmix64(seed ^ 0x1417ull));
    if (cfg.has_acoustic()) m.encoder().init(m.params, rng);
    m.denoiser().init(m.params, rng);
    m.vq = make_acoustic_vq(cfg.acoustic_size, cfg.stack * cfg.embed_dim, {}, seed, cfg.ema_decay);
    return m;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

// Values are held as double in memory; f32 records round on write.
struct Record {
    Eigen::Index rows = 0, cols = 0;
    DType type = DType::f32;
    std::vector<double> data;
};

template <class Derived>
Record record_of(const Eigen::MatrixBase<Derived>& m, DType type = DType::f32) {
    Record r;
    r.rows = m.rows();
    r.cols = m.cols();
    r.type = type;
    const RowMatrixXd d = m.template cast<double>();
    r.data.assign(d.data(), d.data() + d.size());
    return r;
}

RowMatrixXf matrix_of(const Record& r) {
    return Eigen::Map<const RowMatrixXd>(r.data.data(), r.rows, r.cols).cast<float>();
}

RowMatrixXd matrix_of_double(const Record& r) { return Eigen::Map<const RowMatrixXd>(r.data.data(), r.rows, r.cols); }

const Record& need(const std::map<std::string, Record>& recs, const std::string& name) {
    const auto it = recs.find(name);
    if (it == recs.end()) throw FormatError("checkpoint: missing record '" + name + "'");
    return it->second;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const CodecModels& m) {
    std::map<std::string, Record> recs;
    const std::string cfg = config_to_text(m.config);
    Record c{1, static_cast<Eigen::Index>(cfg.size()), DType::u8, {}};
    for (unsigned char ch : cfg) c.data.push_back(ch);
    recs["__config__"] = std::move(c);
    recs["__step__"] = Record{1, 1, DType::f64, {static_cast<double>(m.params.step())}};
    for (std::size_t i = 0; i < m.family.ensembles.size(); ++i) {
        const auto& e = m.family.ensembles[i];
        const std::string p = "family." + std::to_string(i);
        recs[p + ".centroids"] = record_of(e.centroids);
        Record s{static_cast<Eigen::Index>(e.sources.size()), 3, DType::f64, {}};
        for (const auto& src : e.sources) {
            s.data.push_back(static_cast<int>(src.domain));
            s.data.push_back(src.offset);
            s.data.push_back(src.count);
        }
        recs[p + ".sources"] = std::move(s);
    }
    const auto lp = m.latent.parameters();
    recs["latent"] = Record{1, static_cast<Eigen::Index>(lp.size()), DType::f32, {lp.begin(), lp.end()}};
    for (const auto& [name, p] : m.params) {
        recs["param." + name] = record_of(p.value);
        recs["adam_m." + name] = record_of(p.adam_m);
        recs["adam_v." + name] = record_of(p.adam_v);
    }
    recs["vq.codebook"] = record_of(m.vq.codebook);
    recs["vq.size"] = record_of(m.vq.ema_size.transpose(), DType::f64);
    recs["vq.sum"] = record_of(m.vq.ema_sum, DType::f64);

    ByteWriter w;
    w.bytes("SMCW");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(recs.size()));
    for (const auto& [name, r] : recs) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(r.rows));
        w.u32(static_cast<std::uint32_t>(r.cols));
        w.u8(static_cast<std::uint8_t>(r.type));
        for (double v : r.data) {
            switch (r.type) {
                case DType::f32: w.f32(static_cast<float>(v)); break;
                case DType::f64: w.f64(v); break;
                case DType::u8: w.u8(static_cast<std::uint8_t>(v)); break;
            }
        }
    }
    w.crc_trailer();
    return w.take();
}

CodecModels deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    std::map<std::string, Record> recs;
    try {
        ByteReader head(bytes);
        if (head.str(4) != "SMCW") throw FormatError("checkpoint: bad magic");
        if (head.u32() != kCheckpointVersion) throw VersionError("checkpoint: unsupported version");
        const auto body = verify_crc_trailer(bytes);
        ByteReader r(body);
        r.str(8);
        const std::uint32_t count = r.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::string name = r.str(r.u16());
            Record rec;
            rec.rows = r.u32();
            rec.cols = r.u32();
            const std::uint8_t type = r.u8();
            if (type > 2) throw FormatError("checkpoint: unknown record type in '" + name + "'");
            rec.type = static_cast<DType>(type);
            const auto n = static_cast<std::size_t>(rec.rows * rec.cols);
            r.require(n * (rec.type == DType::f64 ? 8 : rec.type == DType::f32 ? 4 : 1));
            rec.data.resize(n);
            for (auto& v : rec.data) {
                switch (rec.type) {
                    case DType::f32: v = r.f32(); break;
                    case DType::f64: v = r.f64(); break;
                    case DType::u8: v = r.u8(); break;
                }
            }
            recs[name] = std::move(rec);
        }
        if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
    } catch (const LengthError& e) {
        throw FormatError(std::string("checkpoint: truncated (") + e.what() + ")");
    }

    CodecModels m;
    std::string text;
    for (double v : need(recs, "__config__").data) text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    m.config = parse_config(text);
    m.config.validate();
    m.params.set_step(static_cast<long>(need(recs, "__step__").data.at(0)));

    m.family.stack = m.config.stack;
    m.family.embed_dim = m.config.embed_dim;
    for (std::size_t i = 0;; ++i) {
        const std::string p = "family." + std::to_string(i);
        if (!recs.contains(p + ".centroids")) break;
        EnsembleCodebook e;
        e.centroids = matrix_of(need(recs, p + ".centroids"));
        const auto& s = need(recs, p + ".sources");
        for (Eigen::Index j = 0; j < s.rows; ++j)
            e.sources.push_back({static_cast<Domain>(static_cast<int>(s.data[static_cast<std::size_t>(3 * j)])),
                                 static_cast<int>(s.data[static_cast<std::size_t>(3 * j + 1)]),
                                 static_cast<int>(s.data[static_cast<std::size_t>(3 * j + 2)])});
        if (e.dim() != m.config.stack * m.config.embed_dim) throw ConfigError("checkpoint: codebook dim does not match K*E");
        m.family.ensembles.push_back(std::move(e));
    }
    const auto& lat = need(recs, "latent").data;
    m.latent = LatentCoder::from_parameters(m.config.latent, std::vector<float>(lat.begin(), lat.end()));

    // Parameter names and shapes come from a fresh model of the stored config.
    nn::ParamStore<float> shape;
    Rng rng(0);
    if (m.config.has_acoustic()) m.encoder().init(shape, rng);
    m.denoiser().init(shape, rng);
    for (const auto& [name, p] : shape) {
        auto value = matrix_of(need(recs, "param." + name));
        if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
            throw ConfigError("checkpoint: parameter '" + name + "' has an unexpected shape");
        auto& q = m.params.create(name, std::move(value));
        q.adam_m = matrix_of(need(recs, "adam_m." + name));
        q.adam_v = matrix_of(need(recs, "adam_v." + name));
    }
    m.vq.decay = m.config.ema_decay;
    m.vq.codebook = matrix_of(need(recs, "vq.codebook"));
    m.vq.ema_size = matrix_of_double(need(recs, "vq.size")).reshaped();
    m.vq.ema_sum = matrix_of_double(need(recs, "vq.sum"));
    if (m.vq.size() != m.config.acoustic_size) throw ConfigError("checkpoint: acoustic codebook size mismatch");
    return m;
}

void save_checkpoint(const std::string& path, const CodecModels& m) { write_file(path, serialize_checkpoint(m)); }

CodecModels load_checkpoint(const std::string& path, const CodecConfig* expected) {
    CodecModels m = deserialize_checkpoint(read_file(path));
    if (expected) check_compatible(*expected, m.config);
    return m;
}

FrozenHashes frozen_hashes(const CodecModels& m) {
    FrozenHashes h;
    const auto ex = m.extractor();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(ex.weights().size() + ex.bias().size()) * 4);
    std::memcpy(buf.data(), ex.weights().data(), static_cast<std::size_t>(ex.weights().size()) * 4);
    std::memcpy(buf.data() + ex.weights().size() * 4, ex.bias().data(), static_cast<std::size_t>(ex.bias().size()) * 4);
    h.extractor = crc32(buf);
    h.codebooks = crc32(serialize_family(m.family));
    const auto lp = m.latent.parameters();
    h.latent = crc32(std::span(reinterpret_cast<const std::uint8_t*>(lp.data()), lp.size() * 4));
    return h;
}

// ---- analysis -----------------------------------------------------------------

std::vector<float> fit_to_window(std::span<const float> samples, std::size_t window) {
    std::vector<float> out(window, 0.0f);
    std::copy_n(samples.begin(), std::min(window, samples.size()), out.begin());
    return out;
}

FeatureSequence extract_features(const RowMatrixXf& mel, const CodecConfig& cfg) {
    MelSpectrogram m;
    m.values = mel;
    m.config = cfg.spectral;
    const auto grid = patchify(m, cfg.spectral.patch);
    return SurrogateExtractor(cfg.spectral.patch * cfg.spectral.patch, cfg.embed_dim, cfg.extractor_seed).extract(grid);
}

WindowAnalysis analyse_window(std::span<const float> window, const CodecModels& m) {
    const auto& cfg = m.config;
    if (window.size() != cfg.window().samples) throw ShapeError("analyse_window: expected exactly one window of audio");
    WindowAnalysis a;
    a.mel = logmel(window, cfg.spectral.n_fft, cfg.spectral.hop, cfg.spectral.n_mels, cfg.spectral.fmax,
                   cfg.spectral.log_floor, cfg.spectral.fmin)
                .cast<float>();
    a.features = stack(extract_features(a.mel, cfg), cfg.stack);
    if (m.latent.fitted()) a.latent_tokens = latent_to_tokens(m.latent.encode(a.mel), 2 * cfg.stack);
    return a;
}

RowMatrixXf condition_from_tokens(std::span<const int> semantic, std::span<const int> acoustic, const CodecModels& m) {
    if (semantic.size() != acoustic.size()) throw ShapeError("condition: token halves differ in length");
    const auto& cb = m.family.by_size(m.config.semantic_size);
    const int d = cb.dim();
    RowMatrixXf out = RowMatrixXf::Zero(static_cast<Eigen::Index>(semantic.size()), 2 * d);
    for (std::size_t i = 0; i < semantic.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (semantic[i] < 0 || semantic[i] >= cb.size()) throw FormatError("semantic token out of range for the codebook");
        out.row(r).head(d) = cb.centroids.row(semantic[i]);
        if (m.config.has_acoustic()) {
            if (acoustic[i] < 0 || acoustic[i] >= m.vq.size()) throw FormatError("acoustic token out of range");
            out.row(r).tail(d) = m.vq.codebook.row(acoustic[i]);
        }
    }
    return out;
}

// ---- windows ------------------------------------------------------------------

double ChunkPlan::gain(std::size_t w, std::size_t s) const {
    const std::size_t start = starts.at(w);
    if (s < start || s >= start + window) return 0.0;
    const std::size_t local = s - start;
    const std::size_t ov = overlap();
    if (w > 0 && local < ov) return static_cast<double>(local) / static_cast<double>(ov);
    if (w + 1 < starts.size() && local >= stride) return 1.0 - static_cast<double>(local - stride) / static_cast<double>(ov);
    return 1.0;
}

ChunkPlan plan_chunks(std::size_t samples, std::size_t window, double overlap) {
    if (window == 0) throw ConfigError("plan_chunks: zero window");
    if (!(overlap >= 0.0 && overlap < 0.5)) throw ConfigError("plan_chunks: overlap must be in [0, 0.5)");
    ChunkPlan p;
    p.window = window;
    p.stride = static_cast<std::size_t>(std::llround(static_cast<double>(window) * (1.0 - overlap)));
    std::size_t count = 1;
    if (samples > window) count += (samples - window + p.stride - 1) / p.stride;
    for (std::size_t i = 0; i < count; ++i) p.starts.push_back(i * p.stride);
    return p;
}

// ---- codec -------------------------------------------------------------------

EncoderOutput encode_window(std::span<const float> window, const CodecModels& m) {
    const auto a = analyse_window(window, m);
    if (m.config.has_acoustic())
        return encode(a.features, m.family, m.config.semantic_size, m.encoder(), m.params, m.vq);
    const auto sem = semantic_quantize(a.features, m.family.by_size(m.config.semantic_size));
    EncoderOutput out;
    out.semantic_size = sem.codebook_size;
    out.acoustic_size = 1;
    out.tokens = sem.tokens;
    out.tokens.resize(2 * sem.tokens.size(), 0);
    out.features = RowMatrixXf::Zero(sem.features.rows(), 2 * sem.features.cols());
    out.features.leftCols(sem.features.cols()) = sem.features;
    return out;
}

CodecPacket encode_file(const Waveform& w, const CodecModels& m) {
    if (w.samples.empty()) throw EmptyInputError("encode: empty audio");
    if (w.sample_rate_hz != kSampleRate) throw ConfigError("encode: expected 16 kHz audio");
    const auto& cfg = m.config;
    const auto profile = cfg.window();
    const std::size_t windows = (w.samples.size() + profile.samples - 1) / profile.samples;
    std::vector<EncoderOutput> outs(windows);
    parallel_for(windows, [&](std::size_t i) {
        const std::size_t start = i * profile.samples;
        const auto seg = std::span<const float>(w.samples).subspan(start, std::min(profile.samples, w.samples.size() - start));
        outs[i] = encode_window(fit_to_window(seg, profile.samples), m);
    });
    PacketHeader h;
    h.stack = static_cast<std::uint8_t>(cfg.stack);
    h.semantic_vocab = static_cast<std::uint32_t>(cfg.semantic_size);
    h.acoustic_vocab = static_cast<std::uint32_t>(cfg.acoustic_size);
    h.sample_count = w.samples.size();
    h.window_id = profile.id;
    h.token_pairs = expected_pairs(h.sample_count, cfg.stack, profile.id);
    std::vector<int> sem, ac;
    for (const auto& o : outs) {
        sem.insert(sem.end(), o.semantic_tokens().begin(), o.semantic_tokens().end());
        ac.insert(ac.end(), o.acoustic_tokens().begin(), o.acoustic_tokens().end());
    }
    sem.resize(h.token_pairs);
    ac.resize(h.token_pairs);
    return pack(sem, ac, h);
}

RowMatrixXf decode_condition(const RowMatrixXf& cond, const CodecModels& m, const DecodeOptions& opt,
                             std::uint64_t seed) {
    const auto& cfg = m.config;
    CFGConfig g;
    g.w = opt.guidance >= 0 ? opt.guidance : cfg.guidance;
    g.p_drop = cfg.p_drop;
    g.literal_form = cfg.literal_cfg;
    const int steps = opt.sample_steps > 0 ? opt.sample_steps : cfg.sample_steps;
    const RowMatrixXf tokens = ddim_sample(m.schedule(), steps, m.denoiser(), m.params, cond, g, seed);
    return m.latent.decode(tokens_to_latent(tokens, cfg.latent.dz), cfg.frames_per_window(), cfg.spectral.n_mels);
}

Waveform decode_file(const DecodedPacket& packet, const CodecModels& m, const DecodeOptions& opt) {
    const auto& cfg = m.config;
    const auto& h = packet.header;
    if (h.stack != cfg.stack) throw ConfigError("decode: packet K differs from the checkpoint");
    if (h.acoustic_vocab != static_cast<std::uint32_t>(cfg.acoustic_size))
        throw ConfigError("decode: packet N_a differs from the checkpoint");
    if (h.window_id != cfg.window().id) throw ConfigError("decode: packet window profile differs from the checkpoint");
    if (h.semantic_vocab != static_cast<std::uint32_t>(cfg.semantic_size)) {
        const auto sizes = cfg.family_sizes();
        if (std::find(sizes.begin(), sizes.end(), static_cast<int>(h.semantic_vocab)) == sizes.end())
            throw ConfigError("decode: packet N_s is not in the checkpoint's codebook family");
    }
    if (h.token_pairs == 0 || h.sample_count == 0) throw EmptyInputError("decode: empty packet");
    CodecModels const* models = &m;
    CodecModels local;
    if (h.semantic_vocab != static_cast<std::uint32_t>(cfg.semantic_size)) {
        local = m;
        local.config.semantic_size = static_cast<int>(h.semantic_vocab);
        models = &local;
    }

    const auto profile = cfg.window();
    const auto plan = plan_chunks(h.sample_count, profile.samples, cfg.overlap);
    const std::size_t ppw = static_cast<std::size_t>(cfg.pairs_per_window());
    const std::size_t stride_pairs = plan.stride * ppw / profile.samples;
    const int gl_iters = opt.griffin_lim_iters > 0 ? opt.griffin_lim_iters : cfg.griffin_lim_iters;

    std::vector<std::vector<float>> pieces(plan.starts.size());
    parallel_for(plan.starts.size(), [&](std::size_t w) {
        std::vector<int> sem(ppw), ac(ppw);
        for (std::size_t j = 0; j < ppw; ++j) {
            const std::size_t idx = std::min<std::size_t>(w * stride_pairs + j, h.token_pairs - 1);
            sem[j] = packet.semantic[idx];
            ac[j] = packet.acoustic[idx];
        }
        const RowMatrixXf cond = condition_from_tokens(sem, ac, *models);
        const std::uint64_t seed = splitmix64(opt.seed + 0x9e37ull * (w + 1));
        MelSpectrogram mel;
        mel.config = cfg.spectral;
        mel.values = decode_condition(cond, *models, opt, seed);
        pieces[w] = griffin_lim(mel, gl_iters, seed).samples;
        pieces[w].resize(profile.samples, 0.0f);
    });

    std::vector<double> acc(plan.length(), 0.0);
    for (std::size_t w = 0; w < pieces.size(); ++w)
        for (std::size_t i = 0; i < plan.window; ++i) {
            const std::size_t s = plan.starts[w] + i;
            acc[s] += plan.gain(w, s) * pieces[w][i];
        }
    Waveform out;
    out.samples.resize(h.sample_count);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const double v = acc[i];
        if (!std::isfinite(v)) throw NumericError("decode: non-finite output sample");
        out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
    return out;
}

Waveform decode_packet(std::span<const std::uint8_t> bytes, const CodecModels& m, const DecodeOptions& opt) {
    return decode_file(unpack(bytes), m, opt);
}

// ---- training ------------------------------------------------------------------

std::vector<TrainingClip> prepare_clips(const std::vector<LabeledClip>& clips, const CodecModels& m) {
    std::vector<TrainingClip> out(clips.size());
    const std::size_t window = m.config.window().samples;
    parallel_for(clips.size(), [&](std::size_t i) {
        auto a = analyse_window(fit_to_window(clips[i].wave.samples, window), m);
        out[i].features = std::move(a.features);
        out[i].latent_tokens = std::move(a.latent_tokens);
    });
    return out;
}

LatentCoder fit_latent_coder(const std::vector<LabeledClip>& clips, const CodecConfig& cfg) {
    std::vector<RowMatrixXf> mels(clips.size());
    const std::size_t window = cfg.window().samples;
    parallel_for(clips.size(), [&](std::size_t i) {
        const auto w = fit_to_window(clips[i].wave.samples, window);
        mels[i] = logmel(w, cfg.spectral.n_fft, cfg.spectral.hop, cfg.spectral.n_mels, cfg.spectral.fmax,
                         cfg.spectral.log_floor, cfg.spectral.fmin)
                      .cast<float>();
    });
    return LatentCoder::fit(mels, cfg.latent);
}

std::array<RowMatrixXf, kNumDomains> domain_features(const std::vector<LabeledClip>& clips, const CodecConfig& cfg) {
    std::vector<RowMatrixXf> per_clip(clips.size());
    const std::size_t window = cfg.window().samples;
    parallel_for(clips.size(), [&](std::size_t i) {
        const auto w = fit_to_window(clips[i].wave.samples, window);
        const RowMatrixXf mel = logmel(w, cfg.spectral.n_fft, cfg.spectral.hop, cfg.spectral.n_mels, cfg.spectral.fmax,
                                       cfg.spectral.log_floor, cfg.spectral.fmin)
                                    .cast<float>();
        per_clip[i] = stack(extract_features(mel, cfg), cfg.stack).vectors;
    });
    std::array<RowMatrixXf, kNumDomains> out;
    for (int d = 0; d < kNumDomains; ++d) {
        Eigen::Index rows = 0;
        for (std::size_t i = 0; i < clips.size(); ++i)
            if (static_cast<int>(clips[i].domain) == d) rows += per_clip[i].rows();
        auto& m = out[static_cast<std::size_t>(d)];
        m.resize(rows, cfg.stack * cfg.embed_dim);
        Eigen::Index r = 0;
        for (std::size_t i = 0; i < clips.size(); ++i)
            if (static_cast<int>(clips[i].domain) == d) {
                m.middleRows(r, per_clip[i].rows()) = per_clip[i];
                r += per_clip[i].rows();
            }
    }
    return out;
}

CodebookFamily fit_codebooks(const std::vector<LabeledClip>& clips, const CodecConfig& cfg, std::uint64_t seed,
                             int max_iters) {
    cfg.validate();
    FamilyOptions opt;
    opt.base_size = cfg.family_base;
    opt.stack = cfg.stack;
    opt.embed_dim = cfg.embed_dim;
    opt.seed = seed;
    opt.max_iters = max_iters;
    return build_family(domain_features(clips, cfg), opt);
}

namespace {

struct Batch {
    RowMatrixXf y, es, z0;
};

Batch gather(const std::vector<TrainingClip>& clips, const std::vector<std::size_t>& idx, const EnsembleCodebook& cb) {
    const Eigen::Index t = clips[idx[0]].features.vectors.rows();
    const Eigen::Index d = clips[idx[0]].features.vectors.cols();
    const Eigen::Index zd = clips[idx[0]].latent_tokens.cols();
    Batch b;
    b.y.resize(t * static_cast<Eigen::Index>(idx.size()), d);
    b.z0.resize(t * static_cast<Eigen::Index>(idx.size()), zd);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& c = clips[idx[i]];
        if (c.features.vectors.rows() != t || c.latent_tokens.rows() != t)
            throw ShapeError("training clips must all span one window");
        b.y.middleRows(static_cast<Eigen::Index>(i) * t, t) = c.features.vectors;
        b.z0.middleRows(static_cast<Eigen::Index>(i) * t, t) = c.latent_tokens;
    }
    StackedFeatures sf;
    sf.vectors = b.y;
    b.es = semantic_quantize(sf, cb).features;
    return b;
}

RowMatrixXf acoustic_features(const CodecModels& m, const RowMatrixXf& y, const RowMatrixXf& es) {
    if (!m.config.has_acoustic()) return RowMatrixXf::Zero(y.rows(), y.cols());
    return acoustic_quantize(m.encoder().run(m.params, y, es), m.vq).features;
}

}  // namespace

double validation_loss(const CodecModels& m, const std::vector<TrainingClip>& clips, std::uint64_t seed,
                       bool shuffle_condition) {
    if (clips.empty()) throw EmptyInputError("validation: no clips");
    const auto sched = m.schedule();
    const auto den = m.denoiser();
    const auto& cb = m.family.by_size(m.config.semantic_size);
    constexpr int kDraws = 4;
    std::vector<RowMatrixXf> conds(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
        const auto b = gather(clips, {i}, cb);
        RowMatrixXf c(b.y.rows(), 2 * b.y.cols());
        c << b.es, acoustic_features(m, b.y, b.es);
        conds[i] = std::move(c);
    });
    std::vector<double> losses(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
        Rng rng(splitmix64(seed ^ (0xa11ull + i)));
        const auto& z0 = clips[i].latent_tokens;
        const auto& cond = conds[shuffle_condition ? (i + 1) % clips.size() : i];
        double total = 0.0;
        for (int k = 0; k < kDraws; ++k) {
            const int n = std::uniform_int_distribution<int>(1, sched.steps())(rng);
            const RowMatrixXf eps = gaussian(z0.rows(), z0.cols(), rng);
            const RowMatrixXf v = den.predict(m.params, forward_diffuse(z0, n, eps, sched), n, &cond);
            total += (v - v_target(z0, eps, n, sched)).cast<double>().squaredNorm() / static_cast<double>(v.size());
        }
        losses[i] = total / kDraws;
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(losses.size());
}

TrainReport train_codec(CodecModels& m, const std::vector<TrainingClip>& train, const std::vector<TrainingClip>& val,
                        std::uint64_t seed, const TrainCallback& on_log) {
    const auto& cfg = m.config;
    if (m.family.ensembles.size() != 4) throw StateError("train_codec: semantic codebook family is not fitted");
    if (!m.latent.fitted()) throw StateError("train_codec: latent coder is not fitted");
    if (train.empty()) throw StateError("train_codec: no training clips");
    const auto start_time = std::chrono::steady_clock::now();

    const auto sched = m.schedule();
    const auto den = m.denoiser();
    const auto enc = m.encoder();
    const auto sizes = cfg.family_sizes();
    nn::AdamConfig adam;
    adam.lr = cfg.lr;
    adam.warmup_steps = cfg.warmup_steps;
    const int batch = cfg.batch;

    TrainReport report;
    Rng rng(splitmix64(seed ^ 0x7a11ull ^ static_cast<std::uint64_t>(m.params.step())));
    TrainLog acc;
    int acc_n = 0;
    const long first = m.params.step();
    const long last = first + cfg.train_steps;
    auto validate_now = [&](long step) {
        if (!val.empty()) report.validation.push_back({step, validation_loss(m, val, seed)});
    };
    if (first == 0) validate_now(0);

    for (long step = first + 1; step <= last; ++step) {
        const int size = sizes[std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng)];
        report.ensemble_draws.push_back(size);
        std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
        for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng);
        const Batch b = gather(train, idx, m.family.by_size(size));
        const Eigen::Index len = b.y.rows() / batch;

        nn::Tape<float> tape;
        const nn::Var es = tape.constant(b.es);
        nn::Var ea, commit;
        double usage = 0.0;
        AcousticQuantization q;
        nn::Var ya;
        if (cfg.has_acoustic()) {
            ya = enc.forward(tape, m.params, tape.constant(b.y), es, batch);
            if (m.vq.ema_size.sum() == 0.0)
                m.vq = make_acoustic_vq(cfg.acoustic_size, b.y.cols(), tape.value(ya), seed, cfg.ema_decay);
            q = acoustic_quantize(tape.value(ya), m.vq);
            ea = nn::straight_through(tape, ya, q.features);
            commit = nn::mse(tape, ya, tape.constant(q.features));
            usage = codebook_usage(q.tokens, m.vq.size());
        } else {
            ea = tape.constant(RowMatrixXf::Zero(b.y.rows(), b.y.cols()));
        }
        nn::Var cond = nn::concat_cols(tape, {es, ea});

        std::vector<char> drop(static_cast<std::size_t>(batch));
        bool any_drop = false;
        for (auto& d : drop) {
            d = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.p_drop;
            any_drop = any_drop || d;
        }
        if (any_drop) {
            std::vector<nn::Var> parts;
            for (int i = 0; i < batch; ++i)
                parts.push_back(drop[static_cast<std::size_t>(i)] ? den.null_condition(tape, m.params, len)
                                                                  : nn::slice_rows(tape, cond, i * len, len));
            cond = nn::concat_rows(tape, parts);
        }

        std::vector<int> steps(static_cast<std::size_t>(batch));
        RowMatrixXf zn(b.z0.rows(), b.z0.cols()), target(b.z0.rows(), b.z0.cols());
        for (int i = 0; i < batch; ++i) {
            const int n = std::uniform_int_distribution<int>(1, sched.steps())(rng);
            steps[static_cast<std::size_t>(i)] = n;
            const RowMatrixXf z0 = b.z0.middleRows(i * len, len);
            const RowMatrixXf eps = gaussian(len, z0.cols(), rng);
            zn.middleRows(i * len, len) = forward_diffuse(z0, n, eps, sched);
            target.middleRows(i * len, len) = v_target(z0, eps, n, sched);
        }
        const nn::Var pred = den.forward(tape, m.params, tape.constant(zn), steps, cond, batch);
        const nn::Var recon = nn::mse(tape, pred, tape.constant(target));
        nn::Var loss = recon;
        if (cfg.has_acoustic())
            loss = nn::add(tape, recon, nn::scale(tape, commit, static_cast<float>(cfg.commit_weight)));
        const double recon_v = tape.value(recon)(0, 0);
        const double commit_v = cfg.has_acoustic() ? tape.value(commit)(0, 0) : 0.0;
        if (!std::isfinite(recon_v) || !std::isfinite(commit_v))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));

        m.params.zero_grad();
        tape.backward(loss);
        nn::adam_step(m.params, adam);
        if (cfg.has_acoustic()) ema_update(m.vq, tape.value(ya), q.tokens, cfg.ema_decay);

        acc.recon += recon_v;
        acc.commit += commit_v;
        acc.usage += usage;
        ++acc_n;
        if (step % cfg.log_every == 0 || step == last) {
            TrainLog log{step, size, acc.recon / acc_n, acc.commit / acc_n, acc.usage / acc_n};
            report.logs.push_back(log);
            if (on_log) on_log(log);
            acc = {};
            acc_n = 0;
        }
        if (step % cfg.eval_every == 0 || step == last) validate_now(step);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return report;
}

}  // namespace smc
