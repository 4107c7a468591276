#pragma once

#include <string>
#include <vector>

#include "estoisep/audio_io.hpp"
#include "estoisep/dsp.hpp"
#include "estoisep/loss.hpp"

namespace estoisep {

/// Analysis settings shared by the intelligibility metrics.
struct MetricConfig {
    StftConfig stft;
    EstoiLossConfig loss;
    bool remove_silent_frames = false;  // discard frames 40 dB below the reference peak
    double silence_threshold_db = 40.0;
};

/// 16 kHz configuration matching the training-side analysis ranges
/// (bands up to 8 kHz) at a resolution where every band holds a bin.
MetricConfig wideband_metric_config();

/// Classic 10 kHz third-octave configuration (15 bands from 150 Hz,
/// 384 ms context, silent frames removed). Inputs are resampled.
MetricConfig standard_metric_config();

/// Mean normalized segment correlation between reference and estimate.
/// Equal to minus the per-source training loss term for matching configs.
double estoi_metric(const AudioClip& reference, const AudioClip& estimate,
                    const MetricConfig& config);

/// Per-band temporal correlation with the classic clipped-distortion bound
/// (beta = -15 dB), averaged over bands and segments.
double stoi_metric(const AudioClip& reference, const AudioClip& estimate,
                   const MetricConfig& config);

struct BssScores {
    double sdr_db = 0.0;
    double sir_db = 0.0;
    double sar_db = 0.0;
};

/// BSS-EVAL decomposition of each estimate into target, interference and
/// artifact parts via least-squares projection onto spans of delayed
/// sources. Exact reconstructions report +infinity.
std::pair<BssScores, BssScores> bss_eval(const AudioClip& ref1, const AudioClip& ref2,
                                         const AudioClip& est1, const AudioClip& est2,
                                         int filter_len = 512);

struct MetricReport {
    std::string mixture_id;
    int source = 1;
    double estoi = 0.0;
    double stoi = 0.0;
    double sdr_db = 0.0;
    double sir_db = 0.0;
    double sar_db = 0.0;
};

extern const char* const kMetricCsvHeader;  // mixture_id,source,estoi,stoi,sdr_db,sir_db,sar_db

void write_metric_csv(const std::vector<MetricReport>& rows, const std::string& path);
void write_metric_jsonl(const std::vector<MetricReport>& rows, const std::string& path);

}  // namespace estoisep
