#include "doctest.h"
#include "smc/diffusion.hpp"
#include "smc/synthcorpus.hpp"

#include <cmath>
#include <numbers>

using namespace smc;

TEST_CASE("cosine schedule endpoints and monotonicity") {
    const auto s = build_schedule(1000);
    CHECK(s.steps() == 1000);
    CHECK(s.at(0) == 1.0);
    CHECK(s.at(1000) == 0.0);
    CHECK(s.at(1) >= 0.99);
    // Independent evaluation of the unrescaled curve at n = 1.
    const double root1 = std::cos((1.0 / 1000 + 0.008) / 1.008 * std::numbers::pi / 2);
    CHECK(s.at(1) == doctest::Approx(root1 * root1).epsilon(1e-12));
    for (int n = 1; n <= 1000; ++n) {
        CHECK(s.at(n) < s.at(n - 1));
        CHECK(s.beta(n) > 0.0);
        CHECK(s.beta(n) <= 1.0);
    }
    CHECK(s.beta(1000) == 1.0);
    CHECK_THROWS_AS(s.at(1001), ConfigError);
    CHECK_THROWS_AS(build_schedule(1), ConfigError);
}

TEST_CASE("forward process second moment matches the schedule") {
    const auto s = build_schedule(1000);
    Rng rng(3);
    const RowMatrixXf z0 = RowMatrixXf::Constant(1, 4, 2.0f);
    for (int n : {1, 250, 500, 900}) {
        double acc = 0;
        for (int i = 0; i < 10000; ++i) acc += forward_diffuse(z0, n, gaussian(1, 4, rng), s).squaredNorm();
        const double expected = s.at(n) * 16.0 + (1.0 - s.at(n)) * 4.0;
        CHECK(std::abs(acc / 10000 - expected) / expected < 0.05);
    }
}

TEST_CASE("velocity identities") {
    const auto s = build_schedule(200);
    Rng rng(5);
    const RowMatrixXf z0 = gaussian(6, 5, rng);
    const RowMatrixXf eps = gaussian(6, 5, rng);
    for (int n : {1, 37, 100, 199, 200}) {
        const RowMatrixXf zn = forward_diffuse(z0, n, eps, s);
        const RowMatrixXf v = v_target(z0, eps, n, s);
        const double a = s.at(n);
        CHECK((v - (std::sqrt(a) * eps - std::sqrt(1 - a) * z0)).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((z0_from_v(zn, v, n, s) - z0).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((eps_from_v(zn, v, n, s) - eps).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("timestep subsets") {
    CHECK(ddim_timesteps(10, 10) == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
    CHECK(ddim_timesteps(1000, 4) == std::vector<int>{1000, 750, 500, 250});
    CHECK(ddim_timesteps(1000, 1) == std::vector<int>{1000});
    CHECK_THROWS_AS(ddim_timesteps(10, 0), ConfigError);
    CHECK_THROWS_AS(ddim_timesteps(10, 11), ConfigError);
}

TEST_CASE("guidance blend") {
    RowMatrixXf vc = RowMatrixXf::Constant(2, 2, 0.3f), vu = RowMatrixXf::Constant(2, 2, -1.7f);
    CFGConfig c;
    c.w = 1;
    CHECK(guided_velocity(vc, vu, c) == vc);
    c.w = 0;
    CHECK(guided_velocity(vc, vu, c) == vu);
    c.w = 3;
    CHECK(guided_velocity(vc, vu, c)(0, 0) == doctest::Approx(3 * 0.3 - 2 * -1.7));
    c.literal_form = true;
    CHECK(guided_velocity(vc, vu, c)(0, 0) == doctest::Approx(-2 * 0.3 + 3 * -1.7));
    c.p_drop = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("DDIM with an exact point-mass model lands on the target") {
    const auto s = build_schedule(100);
    RowMatrixXf target(3, 2);
    target << 0.5f, -1, 2, 0, -0.25f, 1;
    const VelocityFn exact = [&](const RowMatrixXf& z, int n, bool) {
        const double a = s.at(n);
        const RowMatrixXd zd = z.cast<double>(), t = target.cast<double>();
        const RowMatrixXd eps = (zd - std::sqrt(a) * t) / std::sqrt(1 - a);
        return RowMatrixXf((std::sqrt(a) * eps - std::sqrt(1 - a) * t).cast<float>());
    };
    CFGConfig cfg;
    cfg.w = 1;
    for (int steps : {100, 10, 1}) {
        const auto z = ddim_sample(s, steps, exact, cfg, 11, 3, 2);
        CHECK((z - target).cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("DDIM is deterministic and guidance endpoints select one branch") {
    const auto s = build_schedule(50);
    int cond_calls = 0, uncond_calls = 0;
    const VelocityFn cond_only = [&](const RowMatrixXf& z, int, bool c) {
        (c ? cond_calls : uncond_calls)++;
        return RowMatrixXf(c ? RowMatrixXf(z * 0.5f) : RowMatrixXf(z * -0.5f));
    };
    CFGConfig one;
    one.w = 1;
    const auto a = ddim_sample(s, 10, cond_only, one, 4, 5, 3);
    CHECK(uncond_calls == 0);
    CHECK(cond_calls == 10);
    CHECK(ddim_sample(s, 10, cond_only, one, 4, 5, 3) == a);
    CHECK(ddim_sample(s, 10, cond_only, one, 5, 5, 3) != a);

    CFGConfig zero;
    zero.w = 0;
    const VelocityFn flipped = [&](const RowMatrixXf& z, int n, bool c) { return cond_only(z, n, !c); };
    CHECK(ddim_sample(s, 10, cond_only, zero, 4, 5, 3) == ddim_sample(s, 10, flipped, one, 4, 5, 3));
}

namespace {

std::vector<RowMatrixXf> mels(int count, std::uint64_t seed) {
    std::vector<RowMatrixXf> out;
    for (const auto& c : generate_corpus(count, default_class_templates(1.28), seed))
        out.push_back(waveform_to_logmel(c.wave).values.topRows(128));
    return out;
}

}  // namespace

TEST_CASE("latent coder shapes and generalisation") {
    const auto train = mels(2, 1);
    const auto held = mels(1, 2);
    const auto coder = LatentCoder::fit(train, {});
    REQUIRE(coder.fitted());
    const RowMatrixXf z = coder.encode(train[0]);
    CHECK(z.rows() == 8 * 16);
    CHECK(z.cols() == 8);
    const RowMatrixXf back = coder.decode(z, 128, 128);
    CHECK(back.rows() == 128);
    CHECK(back.cols() == 128);
    double held_mse = 0;
    for (const auto& m : held) held_mse += coder.reconstruction_mse(m);
    held_mse /= static_cast<double>(held.size());
    CHECK(held_mse <= 2.0 * coder.train_mse());

    const auto again = LatentCoder::from_parameters(coder.spec(), coder.parameters());
    CHECK(again.encode(held[0]) == coder.encode(held[0]));
    CHECK_THROWS_AS(coder.encode(RowMatrixXf::Zero(100, 128)), ShapeError);

    const RowMatrixXf tokens = latent_to_tokens(z, 2);
    CHECK(tokens.rows() == 64);
    CHECK(tokens.cols() == 16);
    CHECK(tokens.row(3).tail(8) == z.row(7));
    CHECK(tokens_to_latent(tokens, 8) == z);
}

TEST_CASE("denoiser shapes, determinism and condition use") {
    const DenoiserSpec spec{16, 12, 32, 4, 2, 100};
    const Denoiser model(spec);
    nn::ParamStore<float> store;
    Rng rng(1);
    model.init(store, rng);
    const RowMatrixXf z = gaussian(6, 16, rng);
    const RowMatrixXf cond = gaussian(6, 12, rng);
    const RowMatrixXf v = model.predict(store, z, 40, &cond);
    CHECK(v.rows() == 6);
    CHECK(v.cols() == 16);
    CHECK(model.predict(store, z, 40, &cond) == v);
    CHECK(model.predict(store, z, 41, &cond) != v);
    CHECK(model.predict(store, z, 40, nullptr) != v);
    const RowMatrixXf other = gaussian(6, 12, rng);
    CHECK(model.predict(store, z, 40, &other) != v);
    const RowMatrixXf bad = gaussian(5, 12, rng);
    CHECK_THROWS_AS(model.predict(store, z, 40, &bad), ShapeError);

    // Batched forward equals per-item prediction.
    nn::Tape<float> tape(false);
    RowMatrixXf zz(12, 16), cc(12, 12);
    zz << z, z;
    cc << cond, other;
    const RowMatrixXf both = tape.value(model.forward(tape, store, tape.constant(zz), {40, 7}, tape.constant(cc), 2));
    CHECK((both.topRows(6) - v).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((both.bottomRows(6) - model.predict(store, z, 7, &other)).cwiseAbs().maxCoeff() < 1e-5);

    const auto s = build_schedule(100);
    CFGConfig cfg;
    const auto sample = ddim_sample(s, 5, model, store, cond, cfg, 3);
    CHECK(sample.rows() == 6);
    CHECK(sample.allFinite());
}
