#include "estoisep/data.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace estoisep {

namespace {

// frame t of the shifted spectrogram is frame (t - shift) mod T of the original
std::size_t shifted_index(std::size_t t, int shift, std::size_t frames) {
    const long s = (static_cast<long>(t) - shift) % static_cast<long>(frames);
    return static_cast<std::size_t>(s < 0 ? s + static_cast<long>(frames) : s);
}

}  // namespace

ComplexSpectrogram tile_to_frames(const ComplexSpectrogram& spec, std::size_t frames) {
    if (spec.frames == 0) throw std::invalid_argument("tile_to_frames: empty spectrogram");
    if (spec.frames == frames) return spec;
    ComplexSpectrogram out;
    out.config = spec.config;
    out.frames = frames;
    const std::size_t fbins = static_cast<std::size_t>(spec.config.freq_bins());
    out.bins.resize(fbins * frames);
    for (std::size_t f = 0; f < fbins; ++f)
        for (std::size_t t = 0; t < frames; ++t) out.at(f, t) = spec.at(f, t % spec.frames);
    return out;
}

AugmentedMixture mix_at_shift(const ComplexSpectrogram& a, const ComplexSpectrogram& b_tiled,
                              int shift_frames) {
    if (a.frames != b_tiled.frames || a.config.freq_bins() != b_tiled.config.freq_bins())
        throw std::invalid_argument("mix_at_shift: track shapes differ");
    const std::size_t fbins = static_cast<std::size_t>(a.config.freq_bins());
    const std::size_t frames = a.frames;

    AugmentedMixture out;
    out.shift_frames = shift_frames;
    out.source1 = a;
    out.source2.config = b_tiled.config;
    out.source2.frames = frames;
    out.source2.bins.resize(fbins * frames);
    out.mixture.config = a.config;
    out.mixture.frames = frames;
    out.mixture.bins.resize(fbins * frames);
    for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t src = shifted_index(t, shift_frames, frames);
        for (std::size_t f = 0; f < fbins; ++f) {
            out.source2.at(f, t) = b_tiled.at(f, src);
            out.mixture.at(f, t) = a.at(f, t) + out.source2.at(f, t);
        }
    }
    return out;
}

void augment_mixtures(const SpeakerTrack& track_a, const SpeakerTrack& track_b, int n_shifts,
                      const std::function<void(const AugmentedMixture&)>& consume) {
    if (n_shifts < 1) throw std::invalid_argument("augment_mixtures: n_shifts must be >= 1");
    if (track_a.spec.frames == 0 || track_b.spec.frames == 0)
        throw std::invalid_argument("augment_mixtures: empty track");
    const std::size_t frames = std::max(track_a.spec.frames, track_b.spec.frames);
    const ComplexSpectrogram a = tile_to_frames(track_a.spec, frames);
    const ComplexSpectrogram b = tile_to_frames(track_b.spec, frames);
    for (int n = 1; n <= n_shifts; ++n) {
        const int shift = static_cast<int>(
            std::lround(static_cast<double>(n) * static_cast<double>(frames) / n_shifts));
        consume(mix_at_shift(a, b, shift));
    }
}

std::vector<MixtureSequence> make_sequences(const AugmentedMixture& mix, int sequence_length,
                                            int hop_sequences) {
    if (sequence_length < 1) throw std::invalid_argument("make_sequences: bad sequence_length");
    if (hop_sequences <= 0) hop_sequences = sequence_length;
    const std::size_t seq_len = static_cast<std::size_t>(sequence_length);
    if (mix.mixture.frames < seq_len)
        throw std::invalid_argument("make_sequences: material shorter than one sequence (" +
                                    std::to_string(mix.mixture.frames) + " < " +
                                    std::to_string(seq_len) + " frames)");
    const std::size_t fbins = static_cast<std::size_t>(mix.mixture.config.freq_bins());

    std::vector<MixtureSequence> out;
    for (std::size_t start = 0; start + seq_len <= mix.mixture.frames;
         start += static_cast<std::size_t>(hop_sequences)) {
        MixtureSequence seq;
        seq.mixture_mags.config = mix.mixture.config;
        seq.target1_mags.config = mix.mixture.config;
        seq.target2_mags.config = mix.mixture.config;
        seq.mixture_mags.mags = Mat(fbins, seq_len);
        seq.target1_mags.mags = Mat(fbins, seq_len);
        seq.target2_mags.mags = Mat(fbins, seq_len);
        seq.mixture_phase = Mat(fbins, seq_len);
        for (std::size_t f = 0; f < fbins; ++f)
            for (std::size_t k = 0; k < seq_len; ++k) {
                const auto z = mix.mixture.at(f, start + k);
                seq.mixture_mags.mags(f, k) = std::abs(z);
                seq.mixture_phase(f, k) = std::arg(z);
                seq.target1_mags.mags(f, k) = std::abs(mix.source1.at(f, start + k));
                seq.target2_mags.mags(f, k) = std::abs(mix.source2.at(f, start + k));
            }
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos)
            throw std::runtime_error("read_manifest: line " + std::to_string(lineno) +
                                     " is not `path<TAB>speaker<TAB>group`: " + path);
        ManifestEntry e;
        e.path = line.substr(0, tab1);
        e.speaker_id = line.substr(tab1 + 1, tab2 - tab1 - 1);
        e.group_id = line.substr(tab2 + 1);
        if (!e.group_id.empty() && e.group_id.back() == '\r') e.group_id.pop_back();
        entries.push_back(std::move(e));
    }
    return entries;
}

SplitLists split_lists(const std::vector<ManifestEntry>& entries, const SplitAssignment& splits) {
    std::set<std::string> train(splits.train_groups.begin(), splits.train_groups.end());
    std::set<std::string> val(splits.validation_groups.begin(), splits.validation_groups.end());
    std::set<std::string> test(splits.test_groups.begin(), splits.test_groups.end());
    for (const auto& g : train)
        if (val.count(g) || test.count(g))
            throw std::invalid_argument("split_lists: group '" + g + "' assigned to two splits");
    for (const auto& g : val)
        if (test.count(g))
            throw std::invalid_argument("split_lists: group '" + g + "' assigned to two splits");

    SplitLists out;
    for (const auto& e : entries) {
        if (train.count(e.group_id)) out.train.push_back(e);
        else if (val.count(e.group_id)) out.validation.push_back(e);
        else if (test.count(e.group_id)) out.test.push_back(e);
    }
    return out;
}

MixtureSequence SequenceDataset::materialize(std::size_t index) const {
    const auto [shift, start] = items.at(index);
    const std::size_t fbins = static_cast<std::size_t>(track_a.config.freq_bins());
    const std::size_t seq_len = static_cast<std::size_t>(sequence_length);
    const std::size_t frames = track_a.frames;

    MixtureSequence seq;
    seq.mixture_mags.config = track_a.config;
    seq.target1_mags.config = track_a.config;
    seq.target2_mags.config = track_a.config;
    seq.mixture_mags.mags = Mat(fbins, seq_len);
    seq.target1_mags.mags = Mat(fbins, seq_len);
    seq.target2_mags.mags = Mat(fbins, seq_len);
    seq.mixture_phase = Mat(fbins, seq_len);
    for (std::size_t k = 0; k < seq_len; ++k) {
        const std::size_t t = static_cast<std::size_t>(start) + k;
        const std::size_t src_b = shifted_index(t, shift, frames);
        for (std::size_t f = 0; f < fbins; ++f) {
            const auto za = track_a.at(f, t);
            const auto zb = track_b_tiled.at(f, src_b);
            const auto z = za + zb;
            seq.mixture_mags.mags(f, k) = std::abs(z);
            seq.mixture_phase(f, k) = std::arg(z);
            seq.target1_mags.mags(f, k) = std::abs(za);
            seq.target2_mags.mags(f, k) = std::abs(zb);
        }
    }
    return seq;
}

SequenceDataset build_sequence_dataset(const SpeakerTrack& track_a, const SpeakerTrack& track_b,
                                       int n_shifts, int sequence_length) {
    if (n_shifts < 1) throw std::invalid_argument("build_sequence_dataset: n_shifts must be >= 1");
    if (track_a.spec.frames == 0 || track_b.spec.frames == 0)
        throw std::invalid_argument("build_sequence_dataset: empty track");
    const std::size_t frames = std::max(track_a.spec.frames, track_b.spec.frames);
    SequenceDataset ds;
    ds.track_a = tile_to_frames(track_a.spec, frames);
    ds.track_b_tiled = tile_to_frames(track_b.spec, frames);
    ds.sequence_length = sequence_length;
    ds.num_shifts = n_shifts;
    const std::size_t seq_len = static_cast<std::size_t>(sequence_length);
    if (frames < seq_len)
        throw std::invalid_argument("build_sequence_dataset: tracks shorter than one sequence");
    for (int n = 1; n <= n_shifts; ++n) {
        const int shift = static_cast<int>(
            std::lround(static_cast<double>(n) * static_cast<double>(frames) / n_shifts));
        for (std::size_t start = 0; start + seq_len <= frames; start += seq_len)
            ds.items.emplace_back(shift, static_cast<int>(start));
    }
    return ds;
}

}  // namespace estoisep
