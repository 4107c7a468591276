#include <doctest.h>

#include <cmath>
#include <random>

#include "estoisep/loss.hpp"
#include "test_support.hpp"

using namespace estoisep;

namespace {

OctaveBandConfig toy_bands() {
    OctaveBandConfig cfg;
    cfg.fft_size = 14;
    cfg.sample_rate = 16000;
    cfg.band_edges = {{1, 2}, {3, 4}, {5, 7}};  // J=3 over 8 bins
    return cfg;
}

EstoiLossConfig toy_loss_config(int n = 4) {
    EstoiLossConfig cfg;
    cfg.band_config = toy_bands();
    cfg.segment_frames = n;
    return cfg;
}

MagnitudeSpectrogram wrap(const Mat& mags) {
    MagnitudeSpectrogram spec;
    spec.config.fft_size = 14;
    spec.config.window_length = 14;
    spec.config.hop = 7;
    spec.mags = mags;
    return spec;
}

OctaveBandMatrix band_matrix(const Mat& values) {
    OctaveBandMatrix bands;
    bands.values = values;
    return bands;
}

}  // namespace

TEST_CASE("segment slides a length-N window over the band matrix") {
    Mat values(1, 3);
    values(0, 0) = 1.0;
    values(0, 1) = 2.0;
    values(0, 2) = 3.0;
    const SegmentStack stack = segment(band_matrix(values), 2);
    REQUIRE(stack.segments.size() == 2);
    CHECK(stack.segments[0](0, 0) == 1.0);
    CHECK(stack.segments[0](0, 1) == 2.0);
    CHECK(stack.segments[1](0, 0) == 2.0);
    CHECK(stack.segments[1](0, 1) == 3.0);
}

TEST_CASE("T == N yields exactly one segment equal to the whole matrix") {
    const Mat values = testsup::random_mat(3, 5, 1);
    const SegmentStack stack = segment(band_matrix(values), 5);
    REQUIRE(stack.segments.size() == 1);
    for (std::size_t i = 0; i < values.a.size(); ++i)
        CHECK(stack.segments[0].a[i] == values.a[i]);
}

TEST_CASE("segment count is T - N + 1") {
    const Mat values = testsup::random_mat(17, 256, 2);
    CHECK(segment(band_matrix(values), 96).segments.size() == 161);
    CHECK_THROWS(segment(band_matrix(testsup::random_mat(2, 3, 3)), 4));  // T < N
}

TEST_CASE("384 ms of context is 96 frames at the default hop") {
    CHECK(default_segment_frames(16000, 64) == 96);
    CHECK(default_segment_frames(10000, 128) == 30);
}

TEST_CASE("normalizing a constant segment gives zeros, not NaNs") {
    Mat seg(3, 4, 2.5);
    const Mat out = normalize_segment(seg, 1e-9);
    for (double v : out.a) CHECK(v == 0.0);
}

TEST_CASE("normalized columns are zero mean and unit norm") {
    const Mat seg = testsup::random_mat(4, 5, 7);
    const Mat out = normalize_segment(seg, 1e-9);
    for (std::size_t c = 0; c < out.cols; ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t r = 0; r < out.rows; ++r) mean += out(r, c);
        mean /= static_cast<double>(out.rows);
        for (std::size_t r = 0; r < out.rows; ++r) sq += out(r, c) * out(r, c);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
    }
}

TEST_CASE("intermediate_d on matched, orthogonal and negated segments") {
    const Mat seg = normalize_segment(testsup::random_mat(4, 6, 9), 1e-9);
    CHECK(intermediate_d(seg, seg) == doctest::Approx(1.0).epsilon(1e-12));

    Mat neg = seg;
    for (double& v : neg.a) v = -v;
    CHECK(intermediate_d(seg, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    // columns of y orthogonal to columns of x
    Mat x(2, 3), y(2, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        x(0, c) = 1.0 / std::sqrt(2.0);
        x(1, c) = -1.0 / std::sqrt(2.0);
        y(0, c) = 1.0 / std::sqrt(2.0);
        y(1, c) = 1.0 / std::sqrt(2.0);
    }
    CHECK(intermediate_d(x, y) == doctest::Approx(0.0));
}

TEST_CASE("perfect estimates score -1 with a scale-insensitive gradient") {
    const Mat tgt1 = testsup::random_mat(8, 12, 21);
    const Mat tgt2 = testsup::random_mat(8, 12, 22);
    const EstoiLossConfig cfg = toy_loss_config();
    const LossOutput out = estoi_loss(wrap(tgt1), wrap(tgt2), wrap(tgt1), wrap(tgt2), cfg);
    CHECK(out.value == doctest::Approx(-1.0).epsilon(1e-9));

    // directional derivative along est -> c*est vanishes (scale invariance)
    double dir1 = 0.0, dir2 = 0.0;
    for (std::size_t i = 0; i < tgt1.a.size(); ++i) {
        dir1 += out.grad_source1.a[i] * tgt1.a[i];
        dir2 += out.grad_source2.a[i] * tgt2.a[i];
    }
    CHECK(std::abs(dir1) < 1e-9);
    CHECK(std::abs(dir2) < 1e-9);
}

TEST_CASE("estoi loss gradients match central differences") {
    // oracle: test-side finite differences, step 1e-6 * scale
    std::mt19937 seed_gen(1234);
    for (int inst = 0; inst < 5; ++inst) {
        Mat est1 = testsup::random_mat(8, 12, seed_gen());
        Mat est2 = testsup::random_mat(8, 12, seed_gen());
        const Mat tgt1 = testsup::random_mat(8, 12, seed_gen());
        const Mat tgt2 = testsup::random_mat(8, 12, seed_gen());
        const EstoiLossConfig cfg = toy_loss_config();

        const LossOutput out = estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg);
        auto eval = [&] {
            return estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg).value;
        };
        CHECK(testsup::max_grad_rel_err(est1.a, out.grad_source1.a, eval) < 1e-6);
        CHECK(testsup::max_grad_rel_err(est2.a, out.grad_source2.a, eval) < 1e-6);
    }
}

TEST_CASE("swapping both sources together leaves the loss unchanged") {
    const Mat est1 = testsup::random_mat(8, 12, 41);
    const Mat est2 = testsup::random_mat(8, 12, 42);
    const Mat tgt1 = testsup::random_mat(8, 12, 43);
    const Mat tgt2 = testsup::random_mat(8, 12, 44);
    const EstoiLossConfig cfg = toy_loss_config();
    const double a = estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg).value;
    const double b = estoi_loss(wrap(est2), wrap(est1), wrap(tgt2), wrap(tgt1), cfg).value;
    CHECK(a == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("loss value stays in [-1, 1] and ignores positive rescaling") {
    std::mt19937 seed_gen(99);
    for (int inst = 0; inst < 10; ++inst) {
        const Mat est1 = testsup::random_mat(8, 12, seed_gen());
        const Mat est2 = testsup::random_mat(8, 12, seed_gen());
        const Mat tgt1 = testsup::random_mat(8, 12, seed_gen());
        const Mat tgt2 = testsup::random_mat(8, 12, seed_gen());
        const EstoiLossConfig cfg = toy_loss_config();
        const double v = estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg).value;
        CHECK(v >= -1.0 - 1e-9);
        CHECK(v <= 1.0 + 1e-9);

        for (const double c : {0.1, 10.0}) {
            Mat s1 = est1, s2 = est2;
            for (double& x : s1.a) x *= c;
            for (double& x : s2.a) x *= c;
            const double vs = estoi_loss(wrap(s1), wrap(s2), wrap(tgt1), wrap(tgt2), cfg).value;
            CHECK(std::abs(vs - v) < 1e-9);
        }
    }
}

TEST_CASE("permuting bins inside one band does not change the loss") {
    const EstoiLossConfig cfg = toy_loss_config();
    Mat est1 = testsup::random_mat(8, 12, 77);
    const Mat est2 = testsup::random_mat(8, 12, 78);
    const Mat tgt1 = testsup::random_mat(8, 12, 79);
    const Mat tgt2 = testsup::random_mat(8, 12, 80);
    const double before = estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg).value;

    // band 2 covers bins 5..7: rotate those three rows of est1
    for (std::size_t t = 0; t < est1.cols; ++t) {
        const double tmp = est1(5, t);
        est1(5, t) = est1(6, t);
        est1(6, t) = est1(7, t);
        est1(7, t) = tmp;
    }
    const double after = estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg).value;
    CHECK(before == doctest::Approx(after).epsilon(1e-12));
}

TEST_CASE("mse loss on matched and offset estimates") {
    const Mat tgt = testsup::random_mat(6, 9, 5);
    Mat offset = tgt;
    for (double& v : offset.a) v += 1.0;
    const LossOutput zero = mse_loss(wrap(tgt), wrap(tgt), wrap(tgt), wrap(tgt));
    CHECK(zero.value == 0.0);
    for (double g : zero.grad_source1.a) CHECK(g == 0.0);

    const LossOutput one = mse_loss(wrap(offset), wrap(offset), wrap(tgt), wrap(tgt));
    CHECK(one.value == doctest::Approx(1.0));
}

TEST_CASE("mse gradients match central differences to 1e-8") {
    Mat est1 = testsup::random_mat(6, 9, 61);
    Mat est2 = testsup::random_mat(6, 9, 62);
    const Mat tgt1 = testsup::random_mat(6, 9, 63);
    const Mat tgt2 = testsup::random_mat(6, 9, 64);
    const LossOutput out = mse_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2));
    auto eval = [&] { return mse_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2)).value; };
    // the loss is quadratic, so a wide step has no truncation error and
    // avoids the cancellation noise a 1e-6 step would leave
    CHECK(testsup::max_grad_rel_err(est1.a, out.grad_source1.a, eval, 1e-10, 1e-3) < 1e-8);
    CHECK(testsup::max_grad_rel_err(est2.a, out.grad_source2.a, eval, 1e-10, 1e-3) < 1e-8);
}

TEST_CASE("combined loss is the stated affine combination") {
    const EstoiLossConfig cfg = toy_loss_config();
    const Mat est1 = testsup::random_mat(8, 12, 71);
    const Mat est2 = testsup::random_mat(8, 12, 72);
    const Mat tgt1 = testsup::random_mat(8, 12, 73);
    const Mat tgt2 = testsup::random_mat(8, 12, 74);

    // alpha = 0 degenerates to mse bit-for-bit
    const LossOutput plain = mse_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2));
    const LossOutput zero = combined_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), 0.0, cfg);
    CHECK(zero.value == plain.value);
    for (std::size_t i = 0; i < plain.grad_source1.a.size(); ++i) {
        CHECK(zero.grad_source1.a[i] == plain.grad_source1.a[i]);
        CHECK(zero.grad_source2.a[i] == plain.grad_source2.a[i]);
    }

    // alpha = 1 with perfect estimates: mse term 0, correlation term -1
    const LossOutput perfect =
        combined_loss(wrap(tgt1), wrap(tgt2), wrap(tgt1), wrap(tgt2), 1.0, cfg);
    CHECK(perfect.value == doctest::Approx(-1.0).epsilon(1e-9));

    // random alpha: recompute the parts independently
    const LossOutput corr = estoi_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), cfg);
    const LossOutput mixed =
        combined_loss(wrap(est1), wrap(est2), wrap(tgt1), wrap(tgt2), 0.5, cfg);
    CHECK(mixed.value == doctest::Approx(plain.value + 0.5 * corr.value).epsilon(1e-12));
    for (std::size_t i = 0; i < mixed.grad_source1.a.size(); ++i)
        CHECK(mixed.grad_source1.a[i] ==
              doctest::Approx(plain.grad_source1.a[i] + 0.5 * corr.grad_source1.a[i])
                  .epsilon(1e-12));
}

TEST_CASE("stage-level backward passes agree with finite differences") {
    Mat seg = testsup::random_mat(4, 6, 81);
    Mat weights = testsup::random_mat(4, 6, 82, -1.0, 1.0);
    const Mat vjp = normalize_segment_vjp(seg, weights, 1e-9);
    auto eval_norm = [&] {
        const Mat out = normalize_segment(seg, 1e-9);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.a.size(); ++i) acc += out.a[i] * weights.a[i];
        return acc;
    };
    CHECK(testsup::max_grad_rel_err(seg.a, vjp.a, eval_norm) < 1e-6);

    const OctaveBandConfig bands = toy_bands();
    Mat mags = testsup::random_mat(8, 5, 83);
    Mat up = testsup::random_mat(3, 5, 84, -1.0, 1.0);
    const Mat band_vjp = band_decompose_vjp(mags, bands, up);
    auto eval_band = [&] {
        double acc = 0.0;
        for (std::size_t j = 0; j < bands.num_bands(); ++j)
            for (std::size_t t = 0; t < mags.cols; ++t) {
                double sq = 0.0;
                for (int f = bands.band_edges[j].first; f <= bands.band_edges[j].second; ++f)
                    sq += mags(static_cast<std::size_t>(f), t) * mags(static_cast<std::size_t>(f), t);
                acc += std::sqrt(sq) * up(j, t);
            }
        return acc;
    };
    CHECK(testsup::max_grad_rel_err(mags.a, band_vjp.a, eval_band) < 1e-6);
}

TEST_CASE("loss rejects shape mismatches and short sequences") {
    const EstoiLossConfig cfg = toy_loss_config();
    const Mat a = testsup::random_mat(8, 12, 91);
    const Mat b = testsup::random_mat(8, 11, 92);
    CHECK_THROWS(estoi_loss(wrap(a), wrap(b), wrap(a), wrap(a), cfg));
    CHECK_THROWS(mse_loss(wrap(a), wrap(b), wrap(a), wrap(a)));

    const Mat tiny = testsup::random_mat(8, 3, 93);  // T=3 < N=4
    CHECK_THROWS(estoi_loss(wrap(tiny), wrap(tiny), wrap(tiny), wrap(tiny), cfg));
}
