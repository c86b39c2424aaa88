#include "smc/eval.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <sstream>
#include <filesystem>
#include <iostream>

using namespace smc;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string profile = "full";
    std::string config_file;
    std::vector<std::string> set;  // key=value overrides
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
    cmd->add_option("--seed", c.seed, "Random seed");
    if (!with_config) return;
    cmd->add_option("--profile", c.profile, "Base configuration: full (10.24 s windows) or desk (2.56 s)")
        ->check(CLI::IsMember({"full", "desk"}));
    cmd->add_option("--config", c.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.set, "Override one configuration key (key=value)");
}

CodecConfig resolve_config(const Common& c) {
    CodecConfig cfg = c.profile == "desk" ? desk_config() : CodecConfig{};
    if (!c.config_file.empty()) cfg = load_config(c.config_file, cfg);
    for (const auto& kv : c.set) cfg = parse_config(kv, cfg);
    cfg.validate();
    return cfg;
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

std::uint32_t file_hash(const std::string& path) { return crc32(read_file(path)); }

void repro_header(const std::string& command, const CodecConfig* cfg, std::uint64_t seed,
                  const std::string& checkpoint = {}) {
    std::cerr << "# smc " << command;
    if (cfg) {
        const auto text = config_to_text(*cfg);
        std::cerr << " config_hash=" << hex32(crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
    }
    std::cerr << " seed=" << seed;
    if (!checkpoint.empty()) std::cerr << " checkpoint_hash=" << hex32(file_hash(checkpoint));
    std::cerr << " threads=" << worker_count() << "\n";
    if (cfg) {
        std::istringstream in(config_to_text(*cfg));
        for (std::string line; std::getline(in, line);) std::cerr << "#   " << line << "\n";
    }
}

// Loads the checkpoint, applying explicit overrides that do not change the model geometry.
CodecModels open_checkpoint(const std::string& path, const Common& c) {
    CodecModels m = load_checkpoint(path);
    CodecConfig cfg = m.config;
    if (!c.config_file.empty()) cfg = load_config(c.config_file, cfg);
    for (const auto& kv : c.set) cfg = parse_config(kv, cfg);
    check_compatible(m.config, cfg);
    cfg.validate();
    m.config = cfg;
    return m;
}

void print_report(const PacketHeader& h) {
    const auto r = bitrate_report(h);
    std::cout << "magic=SMC1\nversion=" << h.version << "\nsample_rate=" << h.sample_rate
              << "\nstack=" << static_cast<int>(h.stack) << "\nsemantic_vocab=" << h.semantic_vocab
              << "\nacoustic_vocab=" << h.acoustic_vocab << "\ntoken_pairs=" << h.token_pairs
              << "\nsample_count=" << h.sample_count << "\nwindow_id=" << h.window_id
              << "\nduration_s=" << static_cast<double>(h.sample_count) / h.sample_rate
              << "\npairs_per_second=" << r.pairs_per_second << "\ntokens_per_second=" << r.tokens_per_second
              << "\nkbps_semantic=" << format_kbps(r.kbps_semantic) << "\nkbps_acoustic=" << format_kbps(r.kbps_acoustic)
              << "\nkbps_total=" << format_kbps(r.kbps_total) << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"Semantic-acoustic audio codec"};
    app.require_subcommand(1);
    Common c;

    std::string out_dir;
    int per_class = 16;
    double duration = 2.56;
    auto* synth = app.add_subcommand("synth-data", "Write a labelled synthetic corpus (WAV files + manifest.tsv)");
    synth->add_option("--out", out_dir, "Output directory")->required();
    synth->add_option("--per-class", per_class, "Clips per class")->check(CLI::PositiveNumber);
    synth->add_option("--duration", duration, "Clip length in seconds")->check(CLI::PositiveNumber);
    add_common(synth, c, false);

    std::string manifest, out_path;
    int iters = 100;
    auto* kmeans = app.add_subcommand("train-kmeans", "Fit the per-domain semantic codebook family");
    kmeans->add_option("--manifest", manifest, "Corpus manifest.tsv")->required()->check(CLI::ExistingFile);
    kmeans->add_option("--out", out_path, "Output codebook file")->required();
    kmeans->add_option("--iters", iters, "Maximum Lloyd iterations")->check(CLI::PositiveNumber);
    add_common(kmeans, c, true);

    std::string family_path, val_manifest, resume;
    int steps = -1;
    auto* train = app.add_subcommand("train-codec", "Train acoustic encoder, acoustic VQ and denoiser");
    train->add_option("--manifest", manifest, "Training manifest.tsv")->required()->check(CLI::ExistingFile);
    train->add_option("--family", family_path, "Codebook family from train-kmeans")->check(CLI::ExistingFile);
    train->add_option("--val", val_manifest, "Validation manifest.tsv")->check(CLI::ExistingFile);
    train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
    train->add_option("--steps", steps, "Training steps (overrides train_steps)")->check(CLI::PositiveNumber);
    train->add_option("--out", out_path, "Output checkpoint")->required();
    add_common(train, c, true);

    std::string in_path, checkpoint;
    int vocab = 0;
    auto* enc = app.add_subcommand("encode", "Encode a WAV file into a token packet");
    enc->add_option("--in", in_path, "Input WAV (16 kHz mono PCM-16)")->required()->check(CLI::ExistingFile);
    enc->add_option("--out", out_path, "Output packet")->required();
    enc->add_option("--checkpoint", checkpoint, "Codec checkpoint")->required()->check(CLI::ExistingFile);
    enc->add_option("--vocab", vocab, "Semantic vocabulary size (one of the family sizes)");
    add_common(enc, c, true);

    DecodeOptions dec_opt;
    auto* dec = app.add_subcommand("decode", "Decode a token packet into a WAV file");
    dec->add_option("--in", in_path, "Input packet")->required()->check(CLI::ExistingFile);
    dec->add_option("--out", out_path, "Output WAV")->required();
    dec->add_option("--checkpoint", checkpoint, "Codec checkpoint")->required()->check(CLI::ExistingFile);
    dec->add_option("--steps", dec_opt.sample_steps, "DDIM sampling steps")->check(CLI::PositiveNumber);
    dec->add_option("--cfg", dec_opt.guidance, "Guidance scale")->check(CLI::NonNegativeNumber);
    dec->add_option("--gl-iters", dec_opt.griffin_lim_iters, "Griffin-Lim iterations")->check(CLI::PositiveNumber);
    add_common(dec, c, true);

    std::string csv_path;
    auto* ev = app.add_subcommand("eval", "Encode and decode every clip of a manifest and report distances");
    ev->add_option("--manifest", manifest, "Evaluation manifest.tsv")->required()->check(CLI::ExistingFile);
    ev->add_option("--checkpoint", checkpoint, "Codec checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--steps", dec_opt.sample_steps, "DDIM sampling steps")->check(CLI::PositiveNumber);
    ev->add_option("--cfg", dec_opt.guidance, "Guidance scale")->check(CLI::NonNegativeNumber);
    ev->add_option("--gl-iters", dec_opt.griffin_lim_iters, "Griffin-Lim iterations")->check(CLI::PositiveNumber);
    ev->add_option("--csv", csv_path, "Also write a CSV report");
    add_common(ev, c, true);

    auto* info = app.add_subcommand("info", "Print a packet header and its bit rates");
    info->add_option("--in", in_path, "Input packet")->required()->check(CLI::ExistingFile);
    add_common(info, c, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    if (*synth) {
        repro_header("synth-data", nullptr, c.seed);
        const auto clips = generate_corpus(per_class, default_class_templates(duration), c.seed);
        write_corpus(out_dir, clips);
        std::cerr << "wrote " << clips.size() << " clips to " << out_dir << "\n";
    } else if (*kmeans) {
        const auto cfg = resolve_config(c);
        repro_header("train-kmeans", &cfg, c.seed);
        const auto clips = load_corpus(manifest);
        const auto family = fit_codebooks(clips, cfg, c.seed, iters);
        save_family(out_path, family);
        std::cerr << "codebook sizes";
        for (int n : family.sizes()) std::cerr << " " << n;
        std::cerr << " -> " << out_path << "\n";
    } else if (*train) {
        CodecModels m;
        if (!resume.empty()) {
            m = open_checkpoint(resume, c);
        } else {
            if (family_path.empty()) throw StateError("train-codec: --family is required unless --resume is given");
            auto cfg = resolve_config(c);
            const auto clips = load_corpus(manifest);
            std::cerr << "fitting latent coder on " << clips.size() << " clips\n";
            m = initialise_models(cfg, load_family(family_path), fit_latent_coder(clips, cfg), c.seed);
        }
        if (steps > 0) m.config.train_steps = steps;
        repro_header("train-codec", &m.config, c.seed, resume);
        const auto tr = prepare_clips(load_corpus(manifest), m);
        const auto va = val_manifest.empty() ? std::vector<TrainingClip>{} : prepare_clips(load_corpus(val_manifest), m);
        const auto report = train_codec(m, tr, va, c.seed, [](const TrainLog& l) {
            std::fprintf(stderr, "step=%ld ensemble=%d recon=%.6f commit=%.6f usage=%.4f\n", l.step, l.ensemble_size,
                         l.recon, l.commit, l.usage);
        });
        for (const auto& v : report.validation) std::fprintf(stderr, "val step=%ld recon=%.6f\n", v.step, v.recon);
        save_checkpoint(out_path, m);
        std::fprintf(stderr, "saved %s (step %ld, %.1f s)\n", out_path.c_str(), m.params.step(), report.seconds);
    } else if (*enc) {
        if (vocab > 0) c.set.push_back("semantic_size = " + std::to_string(vocab));
        const auto m = open_checkpoint(checkpoint, c);
        repro_header("encode", &m.config, c.seed, checkpoint);
        const auto packet = encode_file(read_wav(in_path), m);
        const auto bytes = serialize_packet(packet);
        write_file(out_path, bytes);
        std::cerr << "wrote " << bytes.size() << " bytes, " << packet.header.token_pairs << " token pairs, "
                  << format_kbps(bitrate_report(packet.header).kbps_total) << " kbps\n";
    } else if (*dec) {
        const auto m = open_checkpoint(checkpoint, c);
        dec_opt.seed = c.seed;
        repro_header("decode", &m.config, c.seed, checkpoint);
        write_wav(out_path, decode_packet(read_file(in_path), m, dec_opt));
    } else if (*ev) {
        const auto m = open_checkpoint(checkpoint, c);
        dec_opt.seed = c.seed;
        repro_header("eval", &m.config, c.seed, checkpoint);
        const auto report = eval_reconstruction(load_corpus(manifest), m, dec_opt);
        std::cout << report_text(report);
        if (!csv_path.empty()) {
            const auto csv = report_csv(report);
            write_file(csv_path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
        }
    } else if (*info) {
        repro_header("info", nullptr, c.seed);
        print_report(unpack(read_file(in_path)).header);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
