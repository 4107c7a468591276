#include "estoisep/dsp.hpp"

#include <cmath>
#include <stdexcept>

#include "estoisep/fft.hpp"

namespace estoisep {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void StftConfig::validate() const {
    if (window_length < 8 || window_length % 2 != 0)
        throw std::invalid_argument("StftConfig: window_length must be even and >= 8");
    if (hop < 1 || hop > window_length)
        throw std::invalid_argument("StftConfig: hop must be in [1, window_length]");
    if (fft_size < window_length)
        throw std::invalid_argument("StftConfig: fft_size must be >= window_length");
    if (sample_rate <= 0) throw std::invalid_argument("StftConfig: sample_rate must be positive");
}

std::vector<double> analysis_window(const StftConfig& config) {
    const int n = config.window_length;
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
        w[static_cast<std::size_t>(i)] = std::sqrt(hann);
    }
    return w;
}

ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& config) {
    config.validate();
    clip.validate();
    if (clip.sample_rate != config.sample_rate)
        throw std::invalid_argument("stft: clip sample rate " + std::to_string(clip.sample_rate) +
                                    " does not match config " + std::to_string(config.sample_rate));
    const std::size_t wl = static_cast<std::size_t>(config.window_length);
    const std::size_t hop = static_cast<std::size_t>(config.hop);
    if (clip.samples.size() < wl)
        throw std::invalid_argument("stft: clip shorter than one analysis window");

    const std::size_t frames = (clip.samples.size() - wl) / hop + 1;
    const std::size_t fbins = static_cast<std::size_t>(config.freq_bins());
    const auto win = analysis_window(config);

    ComplexSpectrogram spec;
    spec.config = config;
    spec.frames = frames;
    spec.bins.assign(fbins * frames, {0.0, 0.0});

    std::vector<cplx> buf(static_cast<std::size_t>(config.fft_size));
    for (std::size_t t = 0; t < frames; ++t) {
        const double* x = clip.samples.data() + t * hop;
        for (std::size_t i = 0; i < wl; ++i) buf[i] = cplx(x[i] * win[i], 0.0);
        for (std::size_t i = wl; i < buf.size(); ++i) buf[i] = cplx(0.0, 0.0);
        fft(buf);
        for (std::size_t f = 0; f < fbins; ++f) spec.at(f, t) = buf[f];
    }
    return spec;
}

AudioClip istft(const ComplexSpectrogram& spec) {
    spec.config.validate();
    const std::size_t wl = static_cast<std::size_t>(spec.config.window_length);
    const std::size_t hop = static_cast<std::size_t>(spec.config.hop);
    const std::size_t nfft = static_cast<std::size_t>(spec.config.fft_size);
    const std::size_t fbins = static_cast<std::size_t>(spec.config.freq_bins());
    const auto win = analysis_window(spec.config);

    const std::size_t out_len = spec.frames == 0 ? 0 : (spec.frames - 1) * hop + wl;
    std::vector<double> acc(out_len, 0.0);
    std::vector<double> norm(out_len, 0.0);

    std::vector<cplx> buf(nfft);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        for (std::size_t f = 0; f < fbins; ++f) buf[f] = spec.at(f, t);
        for (std::size_t f = fbins; f < nfft; ++f) buf[f] = std::conj(spec.at(nfft - f, t));
        ifft(buf);
        double* dst = acc.data() + t * hop;
        double* wsum = norm.data() + t * hop;
        for (std::size_t i = 0; i < wl; ++i) {
            dst[i] += buf[i].real() * win[i];
            wsum[i] += win[i] * win[i];
        }
    }

    AudioClip out;
    out.sample_rate = spec.config.sample_rate;
    out.samples.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i)
        out.samples[i] = norm[i] > 1e-12 ? acc[i] / norm[i] : 0.0;
    return out;
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec) {
    const std::size_t fbins = static_cast<std::size_t>(spec.config.freq_bins());
    MagnitudeSpectrogram out;
    out.config = spec.config;
    out.mags = Mat(fbins, spec.frames);
    for (std::size_t f = 0; f < fbins; ++f)
        for (std::size_t t = 0; t < spec.frames; ++t) out.mags(f, t) = std::abs(spec.at(f, t));
    return out;
}

Mat phase(const ComplexSpectrogram& spec) {
    const std::size_t fbins = static_cast<std::size_t>(spec.config.freq_bins());
    Mat out(fbins, spec.frames);
    for (std::size_t f = 0; f < fbins; ++f)
        for (std::size_t t = 0; t < spec.frames; ++t)
            out(f, t) = std::arg(spec.at(f, t));
    return out;
}

ComplexSpectrogram from_polar(const MagnitudeSpectrogram& mags, const Mat& phases) {
    if (!mags.mags.same_shape(phases))
        throw std::invalid_argument("from_polar: magnitude/phase shape mismatch");
    ComplexSpectrogram spec;
    spec.config = mags.config;
    spec.frames = mags.mags.cols;
    spec.bins.resize(mags.mags.rows * mags.mags.cols);
    for (std::size_t f = 0; f < mags.mags.rows; ++f)
        for (std::size_t t = 0; t < mags.mags.cols; ++t)
            spec.at(f, t) = std::polar(mags.mags(f, t), phases(f, t));
    return spec;
}

}  // namespace estoisep
