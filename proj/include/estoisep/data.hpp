#pragma once

#include <functional>
#include <string>
#include <vector>

#include "estoisep/dsp.hpp"

namespace estoisep {

/// All of one speaker's material, concatenated in the time domain and
/// transformed once.
struct SpeakerTrack {
    std::string speaker_id;
    ComplexSpectrogram spec;
};

/// One circular-shift mixture: track B rotated by shift_frames and summed
/// with track A in the complex domain.
struct AugmentedMixture {
    int shift_frames = 0;
    ComplexSpectrogram mixture;
    ComplexSpectrogram source1;
    ComplexSpectrogram source2;
};

/// Fixed-length training unit cut from an augmented mixture.
struct MixtureSequence {
    MagnitudeSpectrogram mixture_mags;
    MagnitudeSpectrogram target1_mags;
    MagnitudeSpectrogram target2_mags;
    Mat mixture_phase;  // F x T
};

/// Tile or crop a spectrogram circularly to the requested frame count.
ComplexSpectrogram tile_to_frames(const ComplexSpectrogram& spec, std::size_t frames);

/// Mixture for one shift: source2 delayed circularly by shift_frames.
AugmentedMixture mix_at_shift(const ComplexSpectrogram& a, const ComplexSpectrogram& b_tiled,
                              int shift_frames);

/// Streams n_shifts mixtures, shift n = round(n * T_s / n_shifts) frames of
/// the longer track, n = 1..n_shifts. The shorter track is tiled first.
void augment_mixtures(const SpeakerTrack& track_a, const SpeakerTrack& track_b, int n_shifts,
                      const std::function<void(const AugmentedMixture&)>& consume);

/// Non-overlapping (by default) windows of sequence_length frames; the
/// remainder is dropped. Mixture phase is kept for reconstruction.
std::vector<MixtureSequence> make_sequences(const AugmentedMixture& mix, int sequence_length,
                                            int hop_sequences = 0);

/// One manifest row: a WAV with its speaker and list/group labels.
struct ManifestEntry {
    std::string path;
    std::string speaker_id;
    std::string group_id;
};

/// Parse `path<TAB>speaker_id<TAB>group_id` lines (UTF-8, # comments).
std::vector<ManifestEntry> read_manifest(const std::string& path);

struct SplitAssignment {
    std::vector<std::string> train_groups;
    std::vector<std::string> validation_groups;
    std::vector<std::string> test_groups;
};

struct SplitLists {
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> validation;
    std::vector<ManifestEntry> test;
};

/// Deterministic partition by group membership. A group assigned to two
/// splits is an error; an empty test split is allowed.
SplitLists split_lists(const std::vector<ManifestEntry>& entries, const SplitAssignment& splits);

/// Lazily materialized training set: sequences are described by a
/// (shift, start-frame) pair over two fixed track spectrograms, so thirty
/// augmentation copies never need to live in memory at once.
struct SequenceDataset {
    ComplexSpectrogram track_a;
    ComplexSpectrogram track_b_tiled;
    int sequence_length = 256;
    int num_shifts = 1;
    std::vector<std::pair<int, int>> items;  // (shift_frames, start_frame)

    std::size_t size() const { return items.size(); }
    MixtureSequence materialize(std::size_t index) const;
};

SequenceDataset build_sequence_dataset(const SpeakerTrack& track_a, const SpeakerTrack& track_b,
                                       int n_shifts, int sequence_length);

}  // namespace estoisep
