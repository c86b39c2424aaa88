#include "smc/eval.hpp"

#include <cstdio>
#include <numeric>
#include <set>

namespace smc {

SpectralDistance spectral_distance(const Waveform& a, const Waveform& b) {
    if (a.samples.size() != b.samples.size())
        throw ShapeError("spectral_distance: lengths differ (" + std::to_string(a.samples.size()) + " vs " +
                         std::to_string(b.samples.size()) + ")");
    if (a.sample_rate_hz != kSampleRate || b.sample_rate_hz != kSampleRate)
        throw ConfigError("spectral_distance: expected 16 kHz audio");
    if (a.samples.empty()) return {};
    constexpr double kFloor = 1e-5;
    SpectralDistance d;
    const int windows[] = {512, 1024, 2048};
    for (int w : windows) {
        const auto sa = stft(a.samples, w, w / 4);
        const auto sb = stft(b.samples, w, w / 4);
        const RowMatrixXd la = sa.cwiseAbs().cwiseMax(kFloor).array().log().matrix();
        const RowMatrixXd lb = sb.cwiseAbs().cwiseMax(kFloor).array().log().matrix();
        d.stft += (la - lb).cwiseAbs().mean();
        const RowMatrixXd ma = logmel(a.samples, w, w / 4, 64, 8000.0, kFloor);
        const RowMatrixXd mb = logmel(b.samples, w, w / 4, 64, 8000.0, kFloor);
        d.mel += (ma - mb).cwiseAbs().mean();
    }
    d.stft /= 3.0;
    d.mel /= 3.0;
    return d;
}

std::string_view probe_layers_name(ProbeLayers l) {
    switch (l) {
        case ProbeLayers::semantic_only: return "semantic_only";
        case ProbeLayers::acoustic_only: return "acoustic_only";
        case ProbeLayers::both: return "both";
    }
    return "?";
}

void stratified_split(const std::vector<int>& labels, double test_fraction, std::uint64_t seed,
                      std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
    train.clear();
    test.clear();
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    Rng rng(splitmix64(seed ^ 0x5b117ull));
    for (auto& [label, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_test = static_cast<std::size_t>(std::lround(static_cast<double>(idx.size()) * test_fraction));
        n_test = std::clamp<std::size_t>(n_test, 1, idx.size() > 1 ? idx.size() - 1 : 1);
        test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
}

ProbeResult probe_eval(const RowMatrixXf& features, const std::vector<int>& labels, const ProbeOptions& opt,
                       ProbeLayers layers) {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("probe: one label per clip required");
    std::set<int> classes(labels.begin(), labels.end());
    if (classes.size() < 2) throw ConfigError("probe: need at least two classes");
    // Labels are remapped to 0..C-1 in sorted order.
    std::map<int, int> remap;
    for (int c : classes) remap.emplace(c, static_cast<int>(remap.size()));
    std::vector<std::size_t> train, test;
    stratified_split(labels, opt.test_fraction, opt.seed, train, test);

    const Eigen::Index d = features.cols();
    RowMatrixXf xtr(static_cast<Eigen::Index>(train.size()), d), xte(static_cast<Eigen::Index>(test.size()), d);
    std::vector<int> ytr, yte;
    for (std::size_t i = 0; i < train.size(); ++i) {
        xtr.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(train[i]));
        ytr.push_back(remap[labels[train[i]]]);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
        xte.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(test[i]));
        yte.push_back(remap[labels[test[i]]]);
    }
    const Eigen::RowVectorXf mean = xtr.colwise().mean();
    const Eigen::RowVectorXf sd =
        ((xtr.rowwise() - mean).cwiseAbs2().colwise().mean().array().sqrt() + 1e-6f).matrix();
    xtr = ((xtr.rowwise() - mean).array().rowwise() / sd.array()).matrix();
    xte = ((xte.rowwise() - mean).array().rowwise() / sd.array()).matrix();

    const int n_classes = static_cast<int>(classes.size());
    nn::ParamStore<float> store;
    Rng rng(splitmix64(opt.seed ^ 0x9a0beull));
    const nn::Dense<float> l1("probe.l1", {static_cast<int>(d), opt.hidden, nn::Activation::tanh});
    const nn::Dense<float> l2("probe.l2", {opt.hidden, n_classes, nn::Activation::none});
    l1.init(store, rng);
    l2.init(store, rng);
    nn::AdamConfig adam;
    adam.lr = opt.lr;
    for (int s = 0; s < opt.steps; ++s) {
        nn::Tape<float> tape;
        const auto logits = l2(tape, store, l1(tape, store, tape.constant(xtr)));
        const auto loss = nn::softmax_cross_entropy(tape, logits, ytr);
        store.zero_grad();
        tape.backward(loss);
        nn::adam_step(store, adam);
    }
    nn::Tape<float> tape(false);
    const RowMatrixXf logits = tape.value(l2(tape, store, l1(tape, store, tape.constant(xte))));
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg;
        logits.row(i).maxCoeff(&arg);
        correct += static_cast<int>(arg) == yte[static_cast<std::size_t>(i)];
    }
    ProbeResult r;
    r.layers = layers;
    r.classes = n_classes;
    r.train = train.size();
    r.test = test.size();
    r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    return r;
}

RowMatrixXf clip_features(const std::vector<LabeledClip>& clips, const CodecModels& m, ProbeLayers layers) {
    const int d = m.config.stack * m.config.embed_dim;
    const int width = layers == ProbeLayers::both ? 2 * d : d;
    RowMatrixXf out(static_cast<Eigen::Index>(clips.size()), width);
    const std::size_t window = m.config.window().samples;
    parallel_for(clips.size(), [&](std::size_t i) {
        const auto enc = encode_window(fit_to_window(clips[i].wave.samples, window), m);
        const Eigen::RowVectorXf mean = enc.features.colwise().mean();
        const auto r = static_cast<Eigen::Index>(i);
        switch (layers) {
            case ProbeLayers::semantic_only: out.row(r) = mean.head(d); break;
            case ProbeLayers::acoustic_only: out.row(r) = mean.tail(d); break;
            case ProbeLayers::both: out.row(r) = mean; break;
        }
    });
    return out;
}

ProbeResult probe_eval(const std::vector<LabeledClip>& clips, const CodecModels& m, ProbeLayers layers,
                       const ProbeOptions& opt) {
    std::vector<int> labels;
    for (const auto& c : clips) labels.push_back(c.class_label);
    return probe_eval(clip_features(clips, m, layers), labels, opt, layers);
}

MetricReport eval_reconstruction(const std::vector<LabeledClip>& clips, const Reconstructor& reconstruct,
                                 const BitrateReport& rate) {
    if (clips.empty()) throw EmptyInputError("eval: no clips");
    std::vector<SpectralDistance> d(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) { d[i] = spectral_distance(clips[i].wave, reconstruct(clips[i].wave)); });
    MetricReport r;
    r.rate = rate;
    r.clips = static_cast<int>(clips.size());
    std::array<DomainMetrics, kNumDomains> dom{};
    for (std::size_t i = 0; i < clips.size(); ++i) {
        r.mel_distance += d[i].mel;
        r.stft_distance += d[i].stft;
        auto& x = dom[static_cast<std::size_t>(clips[i].domain)];
        x.domain = clips[i].domain;
        ++x.clips;
        x.mel += d[i].mel;
        x.stft += d[i].stft;
    }
    r.mel_distance /= r.clips;
    r.stft_distance /= r.clips;
    for (auto& x : dom)
        if (x.clips > 0) {
            x.mel /= x.clips;
            x.stft /= x.clips;
            r.per_domain.push_back(x);
        }
    return r;
}

MetricReport eval_reconstruction(const std::vector<LabeledClip>& clips, const CodecModels& m, const DecodeOptions& opt) {
    PacketHeader h;
    h.stack = static_cast<std::uint8_t>(m.config.stack);
    h.semantic_vocab = static_cast<std::uint32_t>(m.config.semantic_size);
    h.acoustic_vocab = static_cast<std::uint32_t>(m.config.acoustic_size);
    h.window_id = m.config.window().id;
    const Reconstructor fn = [&](const Waveform& w) {
        const auto bytes = serialize_packet(encode_file(w, m));
        return decode_packet(bytes, m, opt);
    };
    return eval_reconstruction(clips, fn, bitrate_report(h));
}

std::string report_text(const MetricReport& r) {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "clips=%d\nmel_distance=%.6f\nstft_distance=%.6f\n", r.clips, r.mel_distance,
                  r.stft_distance);
    out += buf;
    out += "kbps_semantic=" + format_kbps(r.rate.kbps_semantic) + "\n";
    out += "kbps_acoustic=" + format_kbps(r.rate.kbps_acoustic) + "\n";
    out += "kbps_total=" + format_kbps(r.rate.kbps_total) + "\n";
    std::snprintf(buf, sizeof buf, "tokens_per_second=%g\n", r.rate.tokens_per_second);
    out += buf;
    for (const auto& d : r.per_domain) {
        std::snprintf(buf, sizeof buf, "domain=%s clips=%d mel_distance=%.6f stft_distance=%.6f\n",
                      std::string(domain_name(d.domain)).c_str(), d.clips, d.mel, d.stft);
        out += buf;
    }
    return out;
}

std::string report_csv(const MetricReport& r) {
    char buf[256];
    std::string out = "domain,clips,mel_distance,stft_distance,kbps_total,tokens_per_second\n";
    const std::string kbps = format_kbps(r.rate.kbps_total);
    for (const auto& d : r.per_domain) {
        std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%s,%g\n", std::string(domain_name(d.domain)).c_str(), d.clips,
                      d.mel, d.stft, kbps.c_str(), r.rate.tokens_per_second);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "all,%d,%.6f,%.6f,%s,%g\n", r.clips, r.mel_distance, r.stft_distance, kbps.c_str(),
                  r.rate.tokens_per_second);
    return out + buf;
}

}  // namespace smc
