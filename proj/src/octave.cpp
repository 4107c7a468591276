#include "estoisep/octave.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace estoisep {

namespace {
const double kSixthOctave = std::pow(2.0, 1.0 / 6.0);
}

double OctaveBandConfig::center_freq(std::size_t j) const {
    return lowest_center * std::pow(2.0, static_cast<double>(j) / 3.0);
}

int count_bands(double lowest_center, double max_freq) {
    int j = 0;
    while (lowest_center * std::pow(2.0, j / 3.0) * kSixthOctave <= max_freq) ++j;
    return j;
}

OctaveBandConfig make_band_config(int sample_rate, int fft_size, double lowest_center,
                                  double max_freq) {
    if (sample_rate <= 0 || fft_size <= 0)
        throw std::invalid_argument("make_band_config: bad sample_rate/fft_size");
    if (!(lowest_center > 0.0 && lowest_center < max_freq))
        throw std::invalid_argument("make_band_config: need 0 < lowest_center < max_freq");
    if (max_freq > sample_rate / 2.0)
        throw std::invalid_argument("make_band_config: max_freq exceeds Nyquist");

    OctaveBandConfig cfg;
    cfg.lowest_center = lowest_center;
    cfg.max_freq = max_freq;
    cfg.sample_rate = sample_rate;
    cfg.fft_size = fft_size;

    const int num_bands = count_bands(lowest_center, max_freq);
    if (num_bands == 0)
        throw std::invalid_argument("make_band_config: no band fits below max_freq");

    const double bin_hz = static_cast<double>(sample_rate) / fft_size;
    const int fbins = fft_size / 2 + 1;
    for (int j = 0; j < num_bands; ++j) {
        const double center = cfg.center_freq(static_cast<std::size_t>(j));
        const double lo = center / kSixthOctave;
        const double hi = center * kSixthOctave;
        int first = -1, last = -1;
        for (int b = 0; b < fbins; ++b) {
            const double f = b * bin_hz;
            if (f >= lo && f < hi) {
                if (first < 0) first = b;
                last = b;
            }
        }
        if (first < 0)
            throw std::invalid_argument(
                "make_band_config: band " + std::to_string(j) + " (center " +
                std::to_string(center) + " Hz, edges [" + std::to_string(lo) + ", " +
                std::to_string(hi) + ") Hz) contains no STFT bin at " + std::to_string(bin_hz) +
                " Hz resolution; raise lowest_center or fft_size");
        cfg.band_edges.emplace_back(first, last);
    }
    return cfg;
}

OctaveBandMatrix band_decompose(const MagnitudeSpectrogram& spec, const OctaveBandConfig& config) {
    if (spec.config.fft_size != config.fft_size || spec.config.sample_rate != config.sample_rate)
        throw std::invalid_argument("band_decompose: spectrogram/band config mismatch");
    const std::size_t bands = config.num_bands();
    const std::size_t frames = spec.mags.cols;

    OctaveBandMatrix out;
    out.config = config;
    out.values = Mat(bands, frames);
    for (std::size_t j = 0; j < bands; ++j) {
        const auto [f1, f2] = config.band_edges[j];
        for (std::size_t t = 0; t < frames; ++t) {
            double acc = 0.0;
            for (int f = f1; f <= f2; ++f) {
                const double v = spec.mags(static_cast<std::size_t>(f), t);
                acc += v * v;
            }
            out.values(j, t) = std::sqrt(acc);
        }
    }
    return out;
}

}  // namespace estoisep
