#pragma once

#include <vector>

#include "estoisep/dsp.hpp"
#include "estoisep/matrix.hpp"
#include "estoisep/octave.hpp"

namespace estoisep {

/// Settings for the intelligibility-correlation sequence loss.
struct EstoiLossConfig {
    OctaveBandConfig band_config;
    int segment_frames = 96;  // analysis context N; 96 frames = 384 ms at 16 kHz / hop 64
    double epsilon = 1e-9;    // norm guard for silent rows/columns

    void validate() const;
    bool operator==(const EstoiLossConfig&) const = default;
};

/// 384 ms of context expressed in frames for the given rate and hop.
int default_segment_frames(int sample_rate, int hop);

/// M = T-N+1 sliding segments, each bands x segment_frames.
struct SegmentStack {
    std::size_t num_bands = 0;
    std::size_t segment_frames = 0;
    std::vector<Mat> segments;
};

struct LossOutput {
    double value = 0.0;
    Mat grad_source1;  // d value / d est1, F x T
    Mat grad_source2;  // d value / d est2, F x T
};

SegmentStack segment(const OctaveBandMatrix& bands, int segment_frames);

/// Two-stage normalization: rows are centered and scaled to unit norm
/// (temporal), then the columns of the result likewise (spectral). Norms
/// below epsilon are clamped to epsilon instead of dividing by ~0.
Mat normalize_segment(const Mat& seg, double epsilon);

/// (1/N) sum over columns of <x_n, y_n> for two normalized segments.
double intermediate_d(const Mat& seg_x, const Mat& seg_y);

/// d<upstream, normalize_segment(seg)>/d(seg): the normalization backward
/// in isolation, for stage-level gradient checks.
Mat normalize_segment_vjp(const Mat& seg, const Mat& upstream, double epsilon);

/// d<upstream, band_decompose(mags)>/d(mags), same role as above.
Mat band_decompose_vjp(const Mat& mags, const OctaveBandConfig& config, const Mat& upstream);

/// Mean segment correlation between one estimated and one target magnitude
/// spectrogram, after band decomposition, segmentation and the two-stage
/// normalization. If grad is non-null it receives d(d_final)/d(est), F x T.
double estoi_d_final(const Mat& est_mags, const Mat& tgt_mags, const EstoiLossConfig& config,
                     Mat* grad = nullptr);

/// value = -(d_final(est1,tgt1) + d_final(est2,tgt2)) / 2, with exact
/// reverse-mode gradients with respect to both estimated spectrograms.
LossOutput estoi_loss(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                      const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2,
                      const EstoiLossConfig& config);

/// Mean over both sources of the mean squared elementwise error.
LossOutput mse_loss(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                    const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2);

/// mse + alpha * estoi. The correlation term is skipped entirely when
/// alpha == 0 so that the combined loss degenerates to mse bit-for-bit.
LossOutput combined_loss(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                         const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2,
                         double alpha, const EstoiLossConfig& config);

}  // namespace estoisep
