#pragma once

#include <cstddef>
#include <vector>

#include "estoisep/dsp.hpp"
#include "estoisep/matrix.hpp"

namespace estoisep {

/// One-third octave analysis bands over STFT bins. Band j is centered at
/// lowest_center * 2^(j/3) with edges a sixth-octave either side; an STFT
/// bin belongs to the band whose half-open edge interval [low, high)
/// contains the bin center frequency.
struct OctaveBandConfig {
    double lowest_center = 150.0;
    double max_freq = 8000.0;
    int sample_rate = 16000;
    int fft_size = 128;
    // inclusive bin index ranges, one per band, ordered and non-overlapping
    std::vector<std::pair<int, int>> band_edges;

    std::size_t num_bands() const { return band_edges.size(); }
    double center_freq(std::size_t j) const;
    bool operator==(const OctaveBandConfig&) const = default;
};

struct OctaveBandMatrix {
    OctaveBandConfig config;
    Mat values;  // num_bands x frames
};

/// Number of third-octave bands whose upper edge stays at or below max_freq.
int count_bands(double lowest_center, double max_freq);

/// Build the band layout for a given STFT resolution. Throws if any band
/// would contain no STFT bin (the transform is too coarse for the requested
/// lowest center).
OctaveBandConfig make_band_config(int sample_rate, int fft_size, double lowest_center = 150.0,
                                  double max_freq = 8000.0);

/// Y_oct(j,t) = sqrt(sum of squared magnitudes over the bins of band j).
OctaveBandMatrix band_decompose(const MagnitudeSpectrogram& spec, const OctaveBandConfig& config);

}  // namespace estoisep
