#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "estoisep/neural.hpp"
#include "test_support.hpp"

using namespace estoisep;

namespace {

StftConfig tiny_stft() {
    StftConfig cfg;
    cfg.window_length = 10;
    cfg.hop = 5;
    cfg.fft_size = 10;  // 6 frequency bins
    return cfg;
}

EstoiLossConfig tiny_loss() {
    EstoiLossConfig cfg;
    cfg.band_config.fft_size = 10;
    cfg.band_config.sample_rate = 16000;
    cfg.band_config.band_edges = {{1, 2}, {3, 5}};
    cfg.segment_frames = 3;
    return cfg;
}

SeparationModel tiny_model(int hidden, std::uint64_t seed) {
    return make_model(tiny_stft(), tiny_loss(), 1, hidden, 10, seed);
}

MagnitudeSpectrogram wrap6(const Mat& mags) {
    MagnitudeSpectrogram spec;
    spec.config = tiny_stft();
    spec.mags = mags;
    return spec;
}

void zero_params(SeparationModel& model) {
    for (auto& [name, vec] : parameter_tensors(model))
        std::fill(vec->begin(), vec->end(), 0.0);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("zero-weight model outputs the half mask") {
    SeparationModel model = tiny_model(4, 1);
    zero_params(model);
    const Mat mix = testsup::random_mat(6, 10, 3);
    const ForwardResult fwd = forward(model, wrap6(mix));
    for (std::size_t i = 0; i < fwd.mask.a.size(); ++i) {
        CHECK(fwd.mask.a[i] == 0.5);
        CHECK(fwd.est1.mags.a[i] == 0.5 * mix.a[i]);
        CHECK(fwd.est2.mags.a[i] == mix.a[i] - 0.5 * mix.a[i]);
    }
}

TEST_CASE("the two estimates always sum to the mixture exactly") {
    std::mt19937 seed_gen(4);
    for (int inst = 0; inst < 5; ++inst) {
        const SeparationModel model = tiny_model(8, seed_gen());
        const Mat mix = testsup::random_mat(6, 10, seed_gen());
        const ForwardResult fwd = forward(model, wrap6(mix));
        for (std::size_t i = 0; i < mix.a.size(); ++i)
            CHECK(fwd.est1.mags.a[i] + fwd.est2.mags.a[i] == mix.a[i]);
    }
}

TEST_CASE("mask entries stay strictly inside (0,1)") {
    const SeparationModel model = tiny_model(8, 5);
    const Mat mix = testsup::random_mat(6, 10, 6);
    const ForwardResult fwd = forward(model, wrap6(mix));
    for (double m : fwd.mask.a) {
        CHECK(m > 0.0);
        CHECK(m < 1.0);
    }
}

TEST_CASE("two-step LSTM chain matches hand arithmetic") {
    // oracle: the recurrence evaluated with explicit scalar arithmetic
    SeparationModel model = tiny_model(2, 7);
    const std::size_t h = 2, fbins = 6;
    auto& layer = model.layers[0];
    for (std::size_t r = 0; r < 4 * h; ++r) {
        for (std::size_t c = 0; c < fbins; ++c)
            layer.w_in(r, c) = 0.05 * static_cast<double>(r + 1) - 0.02 * static_cast<double>(c);
        for (std::size_t c = 0; c < h; ++c)
            layer.w_rec(r, c) = 0.1 - 0.03 * static_cast<double>(r) + 0.07 * static_cast<double>(c);
        layer.bias[r] = 0.01 * static_cast<double>(r);
    }
    for (std::size_t f = 0; f < fbins; ++f) {
        for (std::size_t c = 0; c < h; ++c)
            model.dense.w(f, c) = 0.2 - 0.05 * static_cast<double>(f) + 0.1 * static_cast<double>(c);
        model.dense.bias[f] = 0.02 * static_cast<double>(f);
    }

    Mat mix(fbins, 2);
    for (std::size_t f = 0; f < fbins; ++f) {
        mix(f, 0) = 0.1 + 0.1 * static_cast<double>(f);
        mix(f, 1) = 0.7 - 0.05 * static_cast<double>(f);
    }
    const ForwardResult fwd = forward(model, wrap6(mix));

    double c_prev[2] = {0.0, 0.0}, h_prev[2] = {0.0, 0.0};
    for (std::size_t t = 0; t < 2; ++t) {
        double a[8];
        for (std::size_t r = 0; r < 8; ++r) {
            a[r] = layer.bias[r];
            for (std::size_t f = 0; f < fbins; ++f) a[r] += layer.w_in(r, f) * mix(f, t);
            for (std::size_t c = 0; c < h; ++c) a[r] += layer.w_rec(r, c) * h_prev[c];
        }
        double h_now[2];
        double c_now[2];
        for (std::size_t i = 0; i < h; ++i) {
            const double gi = sig(a[i]);
            const double gf = sig(a[h + i]);
            const double gg = std::tanh(a[2 * h + i]);
            const double go = sig(a[3 * h + i]);
            c_now[i] = gf * c_prev[i] + gi * gg;
            h_now[i] = go * std::tanh(c_now[i]);
        }
        for (std::size_t f = 0; f < fbins; ++f) {
            double z = model.dense.bias[f];
            for (std::size_t c = 0; c < h; ++c) z += model.dense.w(f, c) * h_now[c];
            CHECK(fwd.mask(f, t) == doctest::Approx(sig(z)).epsilon(1e-12));
        }
        c_prev[0] = c_now[0];
        c_prev[1] = c_now[1];
        h_prev[0] = h_now[0];
        h_prev[1] = h_now[1];
    }
}

TEST_CASE("whole-network gradients match finite differences (correlation loss)") {
    SeparationModel model = tiny_model(8, 11);
    const Mat mix = testsup::random_mat(6, 10, 12);
    const Mat tgt1 = testsup::random_mat(6, 10, 13);
    const Mat tgt2 = testsup::random_mat(6, 10, 14);
    const EstoiLossConfig loss_cfg = tiny_loss();

    const ForwardResult fwd = forward(model, wrap6(mix));
    const LossOutput loss = estoi_loss(fwd.est1, fwd.est2, wrap6(tgt1), wrap6(tgt2), loss_cfg);
    const ModelGrads grads = backward(model, fwd.tape, loss.grad_source1, loss.grad_source2);

    auto eval = [&] {
        const ForwardResult f2 = forward(model, wrap6(mix));
        return estoi_loss(f2.est1, f2.est2, wrap6(tgt1), wrap6(tgt2), loss_cfg).value;
    };
    const auto params = parameter_tensors(model);
    const auto gslots = gradient_tensors(grads);
    for (std::size_t s = 0; s < params.size(); ++s)
        CHECK(testsup::max_grad_rel_err4(*params[s].second, *gslots[s].second, eval, 1e-5) < 1e-5);
}

TEST_CASE("whole-network gradients match finite differences (mse)") {
    SeparationModel model = tiny_model(8, 15);
    const Mat mix = testsup::random_mat(6, 10, 16);
    const Mat tgt1 = testsup::random_mat(6, 10, 17);
    const Mat tgt2 = testsup::random_mat(6, 10, 18);

    const ForwardResult fwd = forward(model, wrap6(mix));
    const LossOutput loss = mse_loss(fwd.est1, fwd.est2, wrap6(tgt1), wrap6(tgt2));
    const ModelGrads grads = backward(model, fwd.tape, loss.grad_source1, loss.grad_source2);

    auto eval = [&] {
        const ForwardResult f2 = forward(model, wrap6(mix));
        return mse_loss(f2.est1, f2.est2, wrap6(tgt1), wrap6(tgt2)).value;
    };
    const auto params = parameter_tensors(model);
    const auto gslots = gradient_tensors(grads);
    for (std::size_t s = 0; s < params.size(); ++s)
        CHECK(testsup::max_grad_rel_err4(*params[s].second, *gslots[s].second, eval, 1e-5) < 1e-5);
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
    SeparationModel model = tiny_model(4, 19);
    const Mat mix = testsup::random_mat(6, 10, 20);
    const ForwardResult fwd = forward(model, wrap6(mix));
    const Mat zeros(6, 10);
    const ModelGrads grads = backward(model, fwd.tape, zeros, zeros);
    for (const auto& [name, vec] : gradient_tensors(grads))
        for (double g : *vec) CHECK(g == 0.0);
}

TEST_CASE("forward and backward are deterministic") {
    const SeparationModel a = tiny_model(8, 33);
    const SeparationModel b = tiny_model(8, 33);
    const Mat mix = testsup::random_mat(6, 10, 34);
    const ForwardResult fa = forward(a, wrap6(mix));
    const ForwardResult fb = forward(b, wrap6(mix));
    for (std::size_t i = 0; i < fa.mask.a.size(); ++i) CHECK(fa.mask.a[i] == fb.mask.a[i]);

    const Mat g1 = testsup::random_mat(6, 10, 35, -1.0, 1.0);
    const Mat g2 = testsup::random_mat(6, 10, 36, -1.0, 1.0);
    const ModelGrads ga = backward(a, fa.tape, g1, g2);
    const ModelGrads gb = backward(b, fb.tape, g1, g2);
    const auto sa = gradient_tensors(ga);
    const auto sb = gradient_tensors(gb);
    for (std::size_t s = 0; s < sa.size(); ++s)
        for (std::size_t i = 0; i < sa[s].second->size(); ++i)
            CHECK((*sa[s].second)[i] == (*sb[s].second)[i]);
}

TEST_CASE("adam first step moves by about the learning rate") {
    SeparationModel model = tiny_model(4, 21);
    AdamState state = make_adam_state(model, 1e-3);
    ModelGrads grads = zero_grads(model);
    grads.dense.bias[0] = 5.0;  // |g| >> eps
    const double before = model.dense.bias[0];
    adam_step(model, grads, state);
    CHECK(model.dense.bias[0] == doctest::Approx(before - 1e-3).epsilon(1e-6));
    CHECK(state.step == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged but advances the counter") {
    SeparationModel model = tiny_model(4, 22);
    const SeparationModel copy = model;
    AdamState state = make_adam_state(model, 1e-3);
    adam_step(model, zero_grads(model), state);
    CHECK(state.step == 1);
    const auto pa = parameter_tensors(model);
    auto copy_mut = copy;
    const auto pb = parameter_tensors(copy_mut);
    for (std::size_t s = 0; s < pa.size(); ++s)
        for (std::size_t i = 0; i < pa[s].second->size(); ++i)
            CHECK((*pa[s].second)[i] == (*pb[s].second)[i]);
}

TEST_CASE("adam drives a quadratic to the origin") {
    // convex oracle f(w) = ||w||^2 on two chosen coordinates
    SeparationModel model = tiny_model(4, 23);
    zero_params(model);
    model.dense.bias[0] = 1.0;
    model.dense.bias[1] = 1.0;
    AdamState state = make_adam_state(model, 0.05);
    for (int step = 0; step < 200; ++step) {
        ModelGrads grads = zero_grads(model);
        grads.dense.bias[0] = 2.0 * model.dense.bias[0];
        grads.dense.bias[1] = 2.0 * model.dense.bias[1];
        adam_step(model, grads, state);
    }
    const double norm = std::sqrt(model.dense.bias[0] * model.dense.bias[0] +
                                  model.dense.bias[1] * model.dense.bias[1]);
    CHECK(norm < 0.01);
}

TEST_CASE("adam rejects non-finite gradients") {
    SeparationModel model = tiny_model(4, 24);
    AdamState state = make_adam_state(model, 1e-3);
    ModelGrads grads = zero_grads(model);
    grads.dense.bias[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(adam_step(model, grads, state));
}

TEST_CASE("global-norm clipping caps the gradient norm") {
    SeparationModel model = tiny_model(4, 25);
    ModelGrads grads = zero_grads(model);
    for (auto& [name, vec] : gradient_tensors(grads))
        (void)name;
    grads.dense.bias.assign(grads.dense.bias.size(), 10.0);
    const double before = grads.global_norm();
    REQUIRE(before > 5.0);
    clip_global_norm(grads, 5.0);
    CHECK(grads.global_norm() == doctest::Approx(5.0).epsilon(1e-12));
    clip_global_norm(grads, 5.0);  // already within bounds: unchanged
    CHECK(grads.global_norm() == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bitwise") {
    const std::string path = "neural_test_ckpt.bin";
    SeparationModel model = tiny_model(8, 26);
    AdamState state = make_adam_state(model, 2e-3);
    // dirty the moments so they round-trip too
    ModelGrads grads = zero_grads(model);
    grads.dense.bias[0] = 1.0;
    adam_step(model, grads, state);
    save_model(model, state, path);

    auto [loaded, lstate] = load_model(path);
    auto pa = parameter_tensors(model);
    auto pb = parameter_tensors(loaded);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t s = 0; s < pa.size(); ++s) {
        REQUIRE(pa[s].second->size() == pb[s].second->size());
        for (std::size_t i = 0; i < pa[s].second->size(); ++i)
            CHECK((*pa[s].second)[i] == (*pb[s].second)[i]);
    }
    CHECK(lstate.step == state.step);
    CHECK(lstate.learning_rate == state.learning_rate);
    CHECK(loaded.stft_config == model.stft_config);
    CHECK(loaded.loss_config == model.loss_config);
    std::remove(path.c_str());
}

TEST_CASE("loading garbage fails cleanly") {
    const std::string path = "neural_test_garbage.bin";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTAMODELFILE###", f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("magic"), std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS(load_model("missing_checkpoint.bin"));
}

TEST_CASE("model trained at one bin count rejects another") {
    const SeparationModel model = tiny_model(4, 27);
    const Mat wrong = testsup::random_mat(5, 10, 28);
    MagnitudeSpectrogram spec;
    spec.config = tiny_stft();
    spec.mags = wrong;
    CHECK_THROWS(forward(model, spec));
}

TEST_CASE("parameter count matches the closed form") {
    // 4*(in*h + h*h + h) per layer plus the dense head
    const SeparationModel small = tiny_model(8, 29);
    const std::size_t expect_small = 4 * (6 * 8 + 8 * 8 + 8) + (6 * 8 + 6);
    CHECK(parameter_count(small) == expect_small);

    StftConfig full;
    EstoiLossConfig loss_cfg = tiny_loss();  // band layout does not affect the count
    const SeparationModel dflt = make_model(full, loss_cfg, 3, 512, 256, 30);
    std::size_t expect = 0;
    int in = 65;
    for (int l = 0; l < 3; ++l) {
        expect += 4 * (static_cast<std::size_t>(in) * 512 + 512 * 512 + 512);
        in = 512;
    }
    expect += 512 * 65 + 65;
    CHECK(parameter_count(dflt) == expect);
    CHECK(parameter_count(dflt) == 5415489u);  // frozen regression constant
}
