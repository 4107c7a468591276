#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "estoisep/data.hpp"
#include "test_support.hpp"

using namespace estoisep;

namespace {

SpeakerTrack track_from_noise(const char* id, double seconds, std::uint32_t seed) {
    SpeakerTrack track;
    track.speaker_id = id;
    track.spec = stft(testsup::noise_clip(seconds, 16000, seed), StftConfig{});
    return track;
}

}  // namespace

TEST_CASE("a single shift on equal-length tracks is the identity alignment") {
    const SpeakerTrack a = track_from_noise("a", 0.5, 1);
    const SpeakerTrack b = track_from_noise("b", 0.5, 2);
    int calls = 0;
    augment_mixtures(a, b, 1, [&](const AugmentedMixture& mix) {
        ++calls;
        CHECK(mix.shift_frames == static_cast<int>(a.spec.frames));  // full rotation
        for (std::size_t f = 0; f < 65; ++f)
            for (std::size_t t = 0; t < mix.mixture.frames; ++t) {
                CHECK(mix.source2.at(f, t) == b.spec.at(f, t));
                CHECK(mix.mixture.at(f, t) == a.spec.at(f, t) + b.spec.at(f, t));
            }
    });
    CHECK(calls == 1);
}

TEST_CASE("augmentation multiplies the data volume by the shift count") {
    const SpeakerTrack a = track_from_noise("a", 2.0, 3);
    const SpeakerTrack b = track_from_noise("b", 2.0, 4);
    const int n_shifts = 30;
    std::size_t total = 0, per_shift = 0;
    augment_mixtures(a, b, n_shifts, [&](const AugmentedMixture& mix) {
        const auto seqs = make_sequences(mix, 64);
        if (per_shift == 0) per_shift = seqs.size();
        total += seqs.size();
    });
    CHECK(total == per_shift * n_shifts);

    const SequenceDataset ds = build_sequence_dataset(a, b, n_shifts, 64);
    CHECK(ds.size() == total);
}

TEST_CASE("mixture magnitude obeys the triangle inequality") {
    const SpeakerTrack a = track_from_noise("a", 0.4, 5);
    const SpeakerTrack b = track_from_noise("b", 0.4, 6);
    augment_mixtures(a, b, 3, [&](const AugmentedMixture& mix) {
        for (std::size_t f = 0; f < 65; ++f)
            for (std::size_t t = 0; t < mix.mixture.frames; ++t)
                CHECK(std::abs(mix.mixture.at(f, t)) <=
                      std::abs(mix.source1.at(f, t)) + std::abs(mix.source2.at(f, t)) + 1e-12);
    });
}

TEST_CASE("complex mixing is not magnitude mixing") {
    // phase cancellation must show up somewhere on random material
    const SpeakerTrack a = track_from_noise("a", 0.4, 7);
    const SpeakerTrack b = track_from_noise("b", 0.4, 8);
    bool strict = false;
    augment_mixtures(a, b, 1, [&](const AugmentedMixture& mix) {
        for (std::size_t f = 0; f < 65 && !strict; ++f)
            for (std::size_t t = 0; t < mix.mixture.frames && !strict; ++t) {
                const double lhs = std::abs(mix.mixture.at(f, t));
                const double rhs =
                    std::abs(mix.source1.at(f, t)) + std::abs(mix.source2.at(f, t));
                if (lhs < rhs - 1e-6) strict = true;
            }
    });
    CHECK(strict);
}

TEST_CASE("the thirty shifts are distinct when the track is long enough") {
    const SpeakerTrack a = track_from_noise("a", 2.0, 9);  // ~496 frames >= 30
    const SpeakerTrack b = track_from_noise("b", 2.0, 10);
    std::set<int> shifts;
    const std::size_t frames = std::max(a.spec.frames, b.spec.frames);
    augment_mixtures(a, b, 30, [&](const AugmentedMixture& mix) {
        shifts.insert(static_cast<int>(mix.shift_frames % static_cast<int>(frames)));
    });
    CHECK(shifts.size() == 30);
}

TEST_CASE("sequence slicing drops the remainder") {
    const SpeakerTrack a = track_from_noise("a", 2.1, 11);
    const SpeakerTrack b = track_from_noise("b", 2.1, 12);
    augment_mixtures(a, b, 1, [&](const AugmentedMixture& mix) {
        REQUIRE(mix.mixture.frames >= 512);
        AugmentedMixture eq = mix;
        const auto shrink = [&](ComplexSpectrogram& s, std::size_t frames) {
            ComplexSpectrogram out;
            out.config = s.config;
            out.frames = frames;
            out.bins.resize(65 * frames);
            for (std::size_t f = 0; f < 65; ++f)
                for (std::size_t t = 0; t < frames; ++t) out.at(f, t) = s.at(f, t);
            s = out;
        };
        shrink(eq.mixture, 512);
        shrink(eq.source1, 512);
        shrink(eq.source2, 512);
        CHECK(make_sequences(eq, 256).size() == 2);
        shrink(eq.mixture, 511);
        shrink(eq.source1, 511);
        shrink(eq.source2, 511);
        CHECK(make_sequences(eq, 256).size() == 1);  // 255 frames dropped
        shrink(eq.mixture, 100);
        shrink(eq.source1, 100);
        shrink(eq.source2, 100);
        CHECK_THROWS(make_sequences(eq, 256));
    });
}

TEST_CASE("default sequences span just over a second") {
    const StftConfig cfg;
    const double seconds =
        ((256.0 - 1.0) * cfg.hop + cfg.window_length) / static_cast<double>(cfg.sample_rate);
    CHECK(seconds == doctest::Approx(1.028));
}

TEST_CASE("sequence content matches the magnitude of the complex sum") {
    const SpeakerTrack a = track_from_noise("a", 1.2, 13);
    const SpeakerTrack b = track_from_noise("b", 1.2, 14);
    const SequenceDataset ds = build_sequence_dataset(a, b, 4, 64);
    REQUIRE(ds.size() > 0);
    const MixtureSequence seq = ds.materialize(ds.size() / 2);
    const auto [shift, start] = ds.items[ds.size() / 2];
    for (std::size_t f = 0; f < 65; f += 7)
        for (std::size_t k = 0; k < 64; k += 5) {
            const std::size_t t = static_cast<std::size_t>(start) + k;
            const std::size_t frames = ds.track_a.frames;
            const std::size_t tb =
                (t + frames - static_cast<std::size_t>(shift) % frames) % frames;
            const auto z = ds.track_a.at(f, t) + ds.track_b_tiled.at(f, tb);
            CHECK(seq.mixture_mags.mags(f, k) == std::abs(z));
            CHECK(seq.target1_mags.mags(f, k) == std::abs(ds.track_a.at(f, t)));
        }
}

TEST_CASE("lazy dataset items agree with the streaming augmentation path") {
    const SpeakerTrack a = track_from_noise("a", 1.0, 15);
    const SpeakerTrack b = track_from_noise("b", 0.7, 16);  // forces tiling
    const int seq_len = 50;
    const SequenceDataset ds = build_sequence_dataset(a, b, 5, seq_len);

    std::vector<MixtureSequence> streamed;
    augment_mixtures(a, b, 5, [&](const AugmentedMixture& mix) {
        for (auto& s : make_sequences(mix, seq_len)) streamed.push_back(std::move(s));
    });
    REQUIRE(streamed.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); i += 3) {
        const MixtureSequence lazy = ds.materialize(i);
        for (std::size_t k = 0; k < lazy.mixture_mags.mags.a.size(); ++k) {
            CHECK(lazy.mixture_mags.mags.a[k] == streamed[i].mixture_mags.mags.a[k]);
            CHECK(lazy.target2_mags.mags.a[k] == streamed[i].target2_mags.mags.a[k]);
        }
    }
}

TEST_CASE("manifest parsing and split assignment") {
    const std::string path = "data_test_manifest.tsv";
    {
        std::ofstream f(path);
        f << "# comment line\n";
        f << "a1.wav\tspk1\tL1\n";
        f << "a2.wav\tspk1\tL6\n";
        f << "b1.wav\tspk2\tL1\n";
        f << "b2.wav\tspk2\tL4\n";
    }
    const auto entries = read_manifest(path);
    REQUIRE(entries.size() == 4);
    CHECK(entries[0].path == "a1.wav");
    CHECK(entries[0].speaker_id == "spk1");
    CHECK(entries[0].group_id == "L1");

    SplitAssignment assign;
    assign.train_groups = {"L6"};
    assign.validation_groups = {"L4"};
    assign.test_groups = {"L1"};
    const SplitLists lists = split_lists(entries, assign);
    CHECK(lists.train.size() == 1);
    CHECK(lists.validation.size() == 1);
    CHECK(lists.test.size() == 2);

    SplitAssignment overlap = assign;
    overlap.validation_groups.push_back("L1");
    CHECK_THROWS(split_lists(entries, overlap));

    SplitAssignment no_test = assign;
    no_test.test_groups.clear();
    const SplitLists empty_test = split_lists(entries, no_test);  // allowed
    CHECK(empty_test.test.empty());
    std::remove(path.c_str());
}

TEST_CASE("malformed manifest lines are rejected") {
    const std::string path = "data_test_badmanifest.tsv";
    std::ofstream(path) << "only_one_field\n";
    CHECK_THROWS(read_manifest(path));
    std::remove(path.c_str());
}

TEST_CASE("twelve groups split 8/2/2 like the corpus layout") {
    std::vector<ManifestEntry> entries;
    for (int i = 1; i <= 13; ++i)
        entries.push_back({"f" + std::to_string(i) + ".wav", "spk1", "L" + std::to_string(i)});
    SplitAssignment assign;
    for (int i = 6; i <= 13; ++i) assign.train_groups.push_back("L" + std::to_string(i));
    assign.validation_groups = {"L4", "L5"};
    assign.test_groups = {"L1", "L2"};
    const SplitLists lists = split_lists(entries, assign);
    CHECK(lists.train.size() == 8);
    CHECK(lists.validation.size() == 2);
    CHECK(lists.test.size() == 2);  // L3 belongs to no split and is dropped
}
