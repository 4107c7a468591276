#pragma once

#include <complex>
#include <vector>

#include "estoisep/audio_io.hpp"
#include "estoisep/matrix.hpp"

namespace estoisep {

enum class WindowKind { SqrtHann };

/// Frame analysis settings. Defaults give 128-sample (8 ms) windows at
/// 16 kHz with 50% overlap; fft_size may exceed window_length (zero-padded
/// transform) but never be smaller.
struct StftConfig {
    int window_length = 128;
    int hop = 64;
    int fft_size = 128;
    WindowKind window = WindowKind::SqrtHann;
    int sample_rate = 16000;

    int freq_bins() const { return fft_size / 2 + 1; }
    /// Analysis-synthesis delay inherent to the frame structure.
    double latency_ms() const {
        return 1000.0 * static_cast<double>(window_length) / sample_rate;
    }
    void validate() const;
    bool operator==(const StftConfig&) const = default;
};

struct ComplexSpectrogram {
    StftConfig config;
    std::size_t frames = 0;
    // row-major, freq_bins() rows x frames cols
    std::vector<std::complex<double>> bins;

    std::complex<double>& at(std::size_t f, std::size_t t) { return bins[f * frames + t]; }
    std::complex<double> at(std::size_t f, std::size_t t) const { return bins[f * frames + t]; }
};

struct MagnitudeSpectrogram {
    StftConfig config;
    Mat mags;  // freq_bins() x frames
};

/// Periodic sqrt-Hann analysis window of the given length.
std::vector<double> analysis_window(const StftConfig& config);

ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& config);

/// Weighted overlap-add synthesis with the analysis window reused for
/// synthesis and per-sample normalization by the summed window energy.
AudioClip istft(const ComplexSpectrogram& spec);

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& spec);

/// Phase angles of each bin, same layout as the magnitudes.
Mat phase(const ComplexSpectrogram& spec);

/// Rebuild a complex spectrogram from magnitudes and phases.
ComplexSpectrogram from_polar(const MagnitudeSpectrogram& mags, const Mat& phases);

}  // namespace estoisep
