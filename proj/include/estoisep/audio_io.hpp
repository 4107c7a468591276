#pragma once

#include <string>
#include <vector>

namespace estoisep {

/// Mono time-domain signal. Samples are nominally in [-1, 1]; out-of-range
/// values are tolerated in memory and clamped on write.
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_seconds() const {
        return static_cast<double>(samples.size()) / sample_rate;
    }
    void validate() const;
};

/// Read a PCM WAV file (16-bit int or 32-bit float, any channel count).
/// Multichannel input is averaged down to mono.
AudioClip read_wav(const std::string& path);

/// Write a mono 16-bit PCM WAV. Samples are clamped to [-1, 1].
void write_wav(const AudioClip& clip, const std::string& path);

/// Band-limited resampling with a Kaiser-windowed sinc kernel (64 zero
/// crossings). Same-rate input is returned unchanged.
AudioClip resample(const AudioClip& clip, int target_rate);

}  // namespace estoisep
