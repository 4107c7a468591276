#include <doctest.h>

#include <complex>

#include "estoisep/dsp.hpp"
#include "estoisep/fft.hpp"
#include "test_support.hpp"

using namespace estoisep;

namespace {

StftConfig default_cfg() {
    return StftConfig{};
}

double interior_rel_l2(const std::vector<double>& a, const std::vector<double>& b,
                       std::size_t trim) {
    double num = 0.0, den = 0.0;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = trim; i + trim < n; ++i) {
        const double d = a[i] - b[i];
        num += d * d;
        den += a[i] * a[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("frame count and bin count at the default 128/64 settings") {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(1024, 0.0);
    const ComplexSpectrogram spec = stft(clip, default_cfg());
    CHECK(spec.frames == 15);  // (1024-128)/64 + 1
    CHECK(spec.config.freq_bins() == 65);
}

TEST_CASE("all-zero clip gives an all-zero spectrogram") {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(512, 0.0);
    const ComplexSpectrogram spec = stft(clip, default_cfg());
    for (const auto& v : spec.bins) CHECK(std::abs(v) == 0.0);
}

TEST_CASE("pure tone concentrates at the expected bin") {
    // oracle: direct DFT of one windowed frame
    const AudioClip clip = testsup::sine_clip(1000.0, 0.25, 16000, 0.9);
    const StftConfig cfg = default_cfg();
    const ComplexSpectrogram spec = stft(clip, cfg);
    const MagnitudeSpectrogram mags = magnitude(spec);
    const std::size_t t = spec.frames / 2;
    std::size_t argmax = 0;
    for (std::size_t f = 1; f < mags.mags.rows; ++f)
        if (mags.mags(f, t) > mags.mags(argmax, t)) argmax = f;
    CHECK(argmax == 8);  // round(1000 * 128 / 16000)

    const auto win = analysis_window(cfg);
    std::complex<double> direct(0.0, 0.0);
    for (int i = 0; i < cfg.window_length; ++i) {
        const double x = clip.samples[t * 64 + static_cast<std::size_t>(i)] * win[static_cast<std::size_t>(i)];
        const double ang = -2.0 * testsup::kPi * 8.0 * i / 128.0;
        direct += x * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    CHECK(std::abs(spec.at(8, t) - direct) < 1e-9 * std::abs(direct) + 1e-12);
}

TEST_CASE("stft rejects short clips and rate mismatches") {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(100, 0.0);
    CHECK_THROWS(stft(clip, default_cfg()));

    clip.samples.assign(1000, 0.0);
    clip.sample_rate = 8000;
    CHECK_THROWS(stft(clip, default_cfg()));
}

TEST_CASE("istft reconstructs the interior to 1e-6") {
    const AudioClip clip = testsup::noise_clip(0.5, 16000, 11);
    const ComplexSpectrogram spec = stft(clip, default_cfg());
    const AudioClip back = istft(spec);
    CHECK(interior_rel_l2(clip.samples, back.samples, 128) < 1e-6);

    double max_abs = 0.0;
    for (std::size_t i = 128; i + 128 < back.samples.size(); ++i)
        max_abs = std::max(max_abs, std::abs(clip.samples[i] - back.samples[i]));
    CHECK(max_abs < 1e-6);
}

TEST_CASE("istft of an all-zero spectrogram is silence") {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(640, 0.0);
    const AudioClip back = istft(stft(clip, default_cfg()));
    for (double s : back.samples) CHECK(s == 0.0);
}

TEST_CASE("magnitude is the elementwise modulus") {
    ComplexSpectrogram spec;
    spec.config = default_cfg();
    spec.frames = 1;
    spec.bins.assign(65, {0.0, 0.0});
    spec.at(3, 0) = {3.0, 4.0};
    const MagnitudeSpectrogram mags = magnitude(spec);
    CHECK(mags.mags(3, 0) == doctest::Approx(5.0));
    CHECK(mags.mags(0, 0) == 0.0);

    const AudioClip clip = testsup::noise_clip(0.1, 16000, 3);
    const ComplexSpectrogram s = stft(clip, default_cfg());
    const MagnitudeSpectrogram m = magnitude(s);
    for (std::size_t f = 0; f < m.mags.rows; ++f)
        for (std::size_t t = 0; t < m.mags.cols; ++t) {
            const auto v = s.at(f, t);
            CHECK(m.mags(f, t) ==
                  doctest::Approx(std::sqrt(v.real() * v.real() + v.imag() * v.imag())));
        }
}

TEST_CASE("Parseval consistency per frame") {
    const AudioClip clip = testsup::noise_clip(0.2, 16000, 5);
    const StftConfig cfg = default_cfg();
    const ComplexSpectrogram spec = stft(clip, cfg);
    const auto win = analysis_window(cfg);
    const std::size_t n = static_cast<std::size_t>(cfg.fft_size);
    for (std::size_t t = 0; t < spec.frames; t += 3) {
        double windowed_energy = 0.0;
        for (std::size_t i = 0; i < win.size(); ++i) {
            const double x = clip.samples[t * 64 + i] * win[i];
            windowed_energy += x * x;
        }
        // one-sided spectrum: double the shared bins, keep DC and Nyquist once
        double spectral = std::norm(spec.at(0, t)) + std::norm(spec.at(n / 2, t));
        for (std::size_t f = 1; f < n / 2; ++f) spectral += 2.0 * std::norm(spec.at(f, t));
        CHECK(spectral / static_cast<double>(n) ==
              doctest::Approx(windowed_energy).epsilon(1e-6));
    }
}

TEST_CASE("analysis-synthesis latency is the window length") {
    const StftConfig cfg = default_cfg();
    CHECK(cfg.latency_ms() == doctest::Approx(8.0));
    StftConfig wide = cfg;
    wide.window_length = 256;
    wide.fft_size = 256;
    wide.hop = 128;
    CHECK(wide.latency_ms() == doctest::Approx(16.0));
}

TEST_CASE("config validation") {
    StftConfig cfg = default_cfg();
    cfg.window_length = 6;
    CHECK_THROWS(cfg.validate());
    cfg = default_cfg();
    cfg.hop = 0;
    CHECK_THROWS(cfg.validate());
    cfg = default_cfg();
    cfg.fft_size = 64;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("fft round trips and matches a direct DFT") {
    std::vector<cplx> data;
    std::mt19937 gen(42);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int i = 0; i < 24; ++i) data.emplace_back(dist(gen), dist(gen));  // non power of two
    const auto orig = data;

    std::vector<cplx> direct(orig.size());
    for (std::size_t k = 0; k < orig.size(); ++k) {
        cplx acc(0.0, 0.0);
        for (std::size_t t = 0; t < orig.size(); ++t) {
            const double ang = -2.0 * testsup::kPi * static_cast<double>(k * t) /
                               static_cast<double>(orig.size());
            acc += orig[t] * cplx(std::cos(ang), std::sin(ang));
        }
        direct[k] = acc;
    }
    fft(data);
    for (std::size_t k = 0; k < data.size(); ++k) CHECK(std::abs(data[k] - direct[k]) < 1e-9);
    ifft(data);
    for (std::size_t k = 0; k < data.size(); ++k) CHECK(std::abs(data[k] - orig[k]) < 1e-9);
}

TEST_CASE("fft cross correlation matches the direct sum") {
    std::mt19937 gen(9);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> a(37), b(29);
    for (auto& v : a) v = dist(gen);
    for (auto& v : b) v = dist(gen);
    const int max_lag = 8;
    const auto fast = cross_correlation(a, b, max_lag);
    for (int k = -max_lag; k <= max_lag; ++k) {
        double direct = 0.0;
        for (std::size_t t = 0; t < a.size(); ++t) {
            const long j = static_cast<long>(t) - k;
            if (j >= 0 && j < static_cast<long>(b.size())) direct += a[t] * b[static_cast<std::size_t>(j)];
        }
        CHECK(fast[static_cast<std::size_t>(k + max_lag)] == doctest::Approx(direct).epsilon(1e-9));
    }
}
