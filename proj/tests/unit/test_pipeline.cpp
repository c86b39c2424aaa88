#include "doctest.h"
#include "smc/eval.hpp"
#include "smc/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace smc;

namespace {

CodecConfig tiny_config() {
    auto c = desk_config();
    c.denoiser_channels = 16;
    c.denoiser_heads = 2;
    c.denoiser_blocks = 1;
    c.acoustic_hidden = 16;
    c.schedule_steps = 100;
    c.sample_steps = 3;
    c.griffin_lim_iters = 4;
    c.batch = 2;
    c.log_every = 2;
    c.eval_every = 5;
    return c;
}

const std::vector<LabeledClip>& corpus() {
    static const auto clips = generate_corpus(1, default_class_templates(2.56), 17);
    return clips;
}

const CodecModels& tiny_models() {
    static const CodecModels m = [] {
        const auto cfg = tiny_config();
        return initialise_models(cfg, fit_codebooks(corpus(), cfg, 1, 10), fit_latent_coder(corpus(), cfg), 2);
    }();
    return m;
}

Waveform tone(double seconds, double hz = 440.0) {
    Waveform w;
    const auto n = static_cast<std::size_t>(std::llround(seconds * kSampleRate));
    for (std::size_t i = 0; i < n; ++i)
        w.samples.push_back(static_cast<float>(0.3 * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / kSampleRate)));
    return w;
}

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("config text roundtrip and validation") {
    const auto cfg = desk_config();
    const auto text = config_to_text(cfg);
    CHECK(config_to_text(parse_config(text)) == text);
    const auto p = parse_config("# comment\nstack = 2\n  guidance=1.5 # trailing\n\n");
    CHECK(p.stack == 2);
    CHECK(p.guidance == 1.5);
    CHECK_THROWS_AS(parse_config("bogus = 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("stack"), ConfigError);
    CHECK_THROWS_AS(parse_config("stack = two"), ConfigError);
    auto bad = cfg;
    bad.semantic_size = 100;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.overlap = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.window_s = 3.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CodecConfig full;
    full.validate();
    CHECK(full.patches() == 512);
    CHECK(full.frames_per_window() == 1024);
}

TEST_CASE("crossfade gains sum to exactly one") {
    const auto plan = plan_chunks(3 * 163840, 163840, 0.0625);
    CHECK(plan.stride == 153600);
    CHECK(plan.overlap() == 10240);
    CHECK(plan.starts.size() == 4);
    CHECK(plan.length() >= 3 * 163840);
    for (std::size_t s = 0; s < plan.length(); ++s) {
        double total = 0;
        for (std::size_t w = 0; w < plan.starts.size(); ++w) total += plan.gain(w, s);
        if (total != 1.0) FAIL("gain sum " << total << " at " << s);
    }
    const auto start = plan.starts[1];
    CHECK(plan.gain(0, start + 2560) == 0.75);
    CHECK(plan.gain(1, start + 2560) == 0.25);
    CHECK(plan_chunks(163840, 163840, 0.0625).starts.size() == 1);
    CHECK(plan_chunks(1000, 163840, 0.0625).starts.size() == 1);
    CHECK_THROWS_AS(plan_chunks(10, 100, 0.5), ConfigError);
}

TEST_CASE("encode keeps the ceiling number of token pairs") {
    const auto& m = tiny_models();
    CHECK(unpack(serialize_packet(encode_file(tone(10.24), m))).header.token_pairs == 512);
    CHECK(encode_file(tone(5.0), m).header.token_pairs == 250);
    CHECK(encode_file(tone(20.48), m).header.token_pairs == 1024);
    CHECK(encode_file(tone(2.56), m).header.token_pairs == 128);
    CHECK(encode_file(tone(0.01), m).header.token_pairs == 1);
    CHECK_THROWS_AS(encode_file(Waveform{}, m), EmptyInputError);
    const auto a = encode_file(tone(3.0), m);
    CHECK(encode_file(tone(3.0), m).payload == a.payload);
}

TEST_CASE("encoded windows match per-window encoding") {
    const auto& m = tiny_models();
    const auto w = tone(5.12, 700.0);
    const auto packet = unpack(serialize_packet(encode_file(w, m)));
    const auto second = encode_window(std::span<const float>(w.samples).subspan(40960, 40960), m);
    for (std::size_t i = 0; i < 128; ++i) {
        CHECK(packet.semantic[128 + i] == second.semantic_tokens()[i]);
        CHECK(packet.acoustic[128 + i] == second.acoustic_tokens()[i]);
    }
}

TEST_CASE("decode returns the original length and bounded samples") {
    const auto& m = tiny_models();
    for (double seconds : {2.56, 1.0, 6.0}) {
        const auto w = tone(seconds);
        const auto out = decode_packet(serialize_packet(encode_file(w, m)), m);
        REQUIRE(out.samples.size() == w.samples.size());
        for (float s : out.samples) {
            CHECK(std::isfinite(s));
            CHECK(std::abs(s) <= 1.0f);
        }
    }
    const auto bytes = serialize_packet(encode_file(tone(1.0), m));
    DecodeOptions a, b;
    b.seed = 99;
    CHECK(decode_packet(bytes, m, a).samples == decode_packet(bytes, m, a).samples);
    CHECK(decode_packet(bytes, m, b).samples != decode_packet(bytes, m, a).samples);
}

TEST_CASE("decode rejects packets from a different configuration") {
    const auto& m = tiny_models();
    auto p = encode_file(tone(1.0), m);
    auto other = unpack(serialize_packet(p));
    other.header.stack = 2;
    CHECK_THROWS_AS(decode_file(other, m), ConfigError);
    other = unpack(serialize_packet(p));
    other.header.acoustic_vocab = 512;
    CHECK_THROWS_AS(decode_file(other, m), ConfigError);
    other = unpack(serialize_packet(p));
    other.header.semantic_vocab = 4096;
    CHECK_THROWS_AS(decode_file(other, m), ConfigError);
    // A smaller ensemble of the same family is accepted.
    auto small = m;
    small.config.semantic_size = 128;
    const auto q = unpack(serialize_packet(encode_file(tone(1.0), small)));
    CHECK(q.header.semantic_vocab == 128);
    CHECK(decode_file(q, m).samples.size() == 16000);
}

TEST_CASE("stitched output has no seam discontinuity") {
    const auto& m = tiny_models();
    // Identical tokens in every window from a constant tone.
    const auto w = tone(5.12, 500.0);
    const auto out = decode_packet(serialize_packet(encode_file(w, m)), m);
    const std::size_t block = 320;
    std::vector<double> rms;
    for (std::size_t s = 0; s + block <= out.samples.size(); s += block) {
        double acc = 0;
        for (std::size_t i = s; i < s + block; ++i) acc += static_cast<double>(out.samples[i]) * out.samples[i];
        rms.push_back(std::sqrt(acc / block));
    }
    const auto plan = plan_chunks(out.samples.size(), 40960, m.config.overlap);
    double seam = 0, intra = 0;
    for (std::size_t b = 1; b < rms.size(); ++b) {
        const std::size_t s = b * block;
        const double step = std::abs(rms[b] - rms[b - 1]);
        bool near_seam = false;
        for (std::size_t w2 = 1; w2 < plan.starts.size(); ++w2) {
            const std::size_t lo = plan.starts[w2], hi = plan.starts[w2] + plan.overlap();
            near_seam = near_seam || (s + block >= lo && s <= hi + block);
        }
        (near_seam ? seam : intra) = std::max(near_seam ? seam : intra, step);
    }
    CHECK(intra > 0);
    CHECK(seam <= 2.0 * intra);
}

TEST_CASE("checkpoint roundtrip, geometry checks and resumed training") {
    auto m = tiny_models();
    const auto train = prepare_clips(corpus(), m);
    std::vector<TrainingClip> val(train.begin(), train.begin() + 2);
    const auto frozen = frozen_hashes(m);
    m.config.train_steps = 8;
    const auto report = train_codec(m, train, val, 4);
    CHECK(m.params.step() == 8);
    CHECK(frozen_hashes(m) == frozen);
    CHECK(report.ensemble_draws.size() == 8);
    CHECK(report.logs.size() == 4);
    CHECK(report.validation.front().step == 0);
    CHECK(report.validation.back().step == 8);

    const auto path = temp_path("smc_ckpt.smcw");
    save_checkpoint(path, m);
    const auto first = read_file(path);
    auto loaded = load_checkpoint(path);
    CHECK(serialize_checkpoint(loaded) == first);
    CHECK(loaded.params.step() == 8);
    CHECK(loaded.vq.ema_size == m.vq.ema_size);
    CHECK(loaded.vq.ema_sum == m.vq.ema_sum);
    CHECK(loaded.vq.codebook == m.vq.codebook);
    CHECK(config_to_text(loaded.config) == config_to_text(m.config));
    CHECK(frozen_hashes(loaded) == frozen);

    auto wrong = m.config;
    wrong.embed_dim = 32;
    CHECK_THROWS_AS(load_checkpoint(path, &wrong), ConfigError);
    auto corrupt = first;
    corrupt[first.size() / 2] ^= 1;
    CHECK_THROWS_AS(deserialize_checkpoint(corrupt), CorruptionError);

    loaded.config.train_steps = 4;
    const auto more = train_codec(loaded, train, val, 4);
    CHECK(loaded.params.step() == 12);
    CHECK(more.logs.back().step == 12);
    std::filesystem::remove(path);

    // Same inputs, same seed: identical trained state.
    auto again = tiny_models();
    again.config.train_steps = 8;
    train_codec(again, train, val, 4);
    CHECK(serialize_checkpoint(again) == first);
}

TEST_CASE("every ensemble size is drawn within four logged intervals") {
    auto m = tiny_models();
    m.config.train_steps = 40;
    m.config.log_every = 5;
    m.config.eval_every = 1000;
    const auto train = prepare_clips(corpus(), m);
    const auto report = train_codec(m, train, {}, 9);
    const auto sizes = m.config.family_sizes();
    for (std::size_t start = 0; start + 20 <= report.ensemble_draws.size(); start += 5)
        for (int s : sizes)
            CHECK(std::count(report.ensemble_draws.begin() + static_cast<std::ptrdiff_t>(start),
                             report.ensemble_draws.begin() + static_cast<std::ptrdiff_t>(start + 20), s) >= 1);
}

TEST_CASE("training requires fitted prerequisites") {
    const auto cfg = tiny_config();
    const auto family = fit_codebooks(corpus(), cfg, 1, 2);
    CHECK_THROWS_AS(initialise_models(cfg, family, {}, 1), StateError);
    CHECK_THROWS_AS(initialise_models(cfg, {}, fit_latent_coder(corpus(), cfg), 1), ConfigError);
    auto m = tiny_models();
    CHECK_THROWS_AS(train_codec(m, {}, {}, 1), StateError);
    m.family.ensembles.clear();
    CHECK_THROWS_AS(train_codec(m, prepare_clips(corpus(), tiny_models()), {}, 1), StateError);
}
