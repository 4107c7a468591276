// estoi_sep: train, run and score low-latency two-speaker separation models
// with an intelligibility-correlation training objective.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "estoisep/audio_io.hpp"
#include "estoisep/data.hpp"
#include "estoisep/gradcheck.hpp"
#include "estoisep/metrics.hpp"
#include "estoisep/neural.hpp"
#include "estoisep/run_config.hpp"
#include "estoisep/trainer.hpp"

namespace fs = std::filesystem;
using namespace estoisep;

namespace {

constexpr int kExitError = 1;
constexpr int kExitMissingManifest = 2;
constexpr int kExitSampleRate = 3;
constexpr int kExitBadCheckpoint = 4;
constexpr int kExitLeakage = 5;

int resolve_threads(int flag_threads) {
    if (flag_threads > 0) return flag_threads;
    if (const char* env = std::getenv("ESTOI_SEP_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

SpeakerTrack build_track(const std::vector<ManifestEntry>& entries, const std::string& speaker,
                         const StftConfig& stft_config) {
    AudioClip all;
    all.sample_rate = stft_config.sample_rate;
    for (const auto& e : entries) {
        if (e.speaker_id != speaker) continue;
        AudioClip clip = read_wav(e.path);
        clip = resample(clip, stft_config.sample_rate);
        all.samples.insert(all.samples.end(), clip.samples.begin(), clip.samples.end());
    }
    if (all.samples.empty())
        throw std::runtime_error("no audio found for speaker '" + speaker + "' in this split");
    SpeakerTrack track;
    track.speaker_id = speaker;
    track.spec = stft(all, stft_config);
    return track;
}

std::vector<MixtureSequence> zero_shift_sequences(const SpeakerTrack& a, const SpeakerTrack& b,
                                                  int sequence_length) {
    std::vector<MixtureSequence> out;
    augment_mixtures(a, b, 1, [&](const AugmentedMixture& mix) {
        auto seqs = make_sequences(mix, sequence_length);
        for (auto& s : seqs) out.push_back(std::move(s));
    });
    return out;
}

void dump_effective_config(const RunConfig& cfg, const fs::path& dir) {
    std::ofstream f(dir / "effective-config.toml", std::ios::trunc);
    f << cfg.to_toml();
}

struct WavPair {
    std::string id;
    std::string path_a;
    std::string path_b;
};

// cross: every speaker-A test utterance against every speaker-B one;
// zip: positional pairing
std::vector<WavPair> make_test_pairs(const std::vector<ManifestEntry>& test_entries,
                                     const std::string& speaker_a, const std::string& speaker_b,
                                     const std::string& pairing, std::size_t max_mixtures) {
    std::vector<const ManifestEntry*> as, bs;
    for (const auto& e : test_entries) {
        if (e.speaker_id == speaker_a) as.push_back(&e);
        if (e.speaker_id == speaker_b) bs.push_back(&e);
    }
    if (as.empty() || bs.empty())
        throw std::runtime_error("test split lacks utterances for one of the speakers");
    std::vector<WavPair> pairs;
    if (pairing == "zip") {
        const std::size_t n = std::min(as.size(), bs.size());
        for (std::size_t i = 0; i < n; ++i)
            pairs.push_back({"mix" + std::to_string(i), as[i]->path, bs[i]->path});
    } else {
        std::size_t k = 0;
        for (const auto* a : as)
            for (const auto* b : bs)
                pairs.push_back({"mix" + std::to_string(k++), a->path, b->path});
    }
    if (max_mixtures > 0 && pairs.size() > max_mixtures) pairs.resize(max_mixtures);
    return pairs;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir, int threads) {
    RunConfig cfg = RunConfig::load(config_path, overrides);
    cfg.validate_modules();
    if (cfg.manifest_path.empty() || !fs::exists(cfg.manifest_path)) {
        std::cerr << "error: manifest not found: " << cfg.manifest_path << "\n";
        return kExitMissingManifest;
    }
    const auto entries = read_manifest(cfg.manifest_path);
    const SplitLists splits = split_lists(entries, cfg.splits);
    if (splits.train.empty() || splits.validation.empty())
        throw std::runtime_error("train/validation split is empty; check data.*_groups");
    if (splits.test.empty())
        std::cerr << "warning: test split is empty (training-only run)\n";

    const EstoiLossConfig loss_cfg = cfg.make_loss_config();
    const SpeakerTrack train_a = build_track(splits.train, cfg.speaker_a, cfg.stft);
    const SpeakerTrack train_b = build_track(splits.train, cfg.speaker_b, cfg.stft);
    const SpeakerTrack val_a = build_track(splits.validation, cfg.speaker_a, cfg.stft);
    const SpeakerTrack val_b = build_track(splits.validation, cfg.speaker_b, cfg.stft);

    const SequenceDataset train_ds = build_sequence_dataset(
        train_a, train_b, cfg.augmentation_shifts, cfg.model.sequence_length);
    const std::vector<MixtureSequence> val_seqs =
        zero_shift_sequences(val_a, val_b, cfg.model.sequence_length);

    fs::create_directories(out_dir);
    dump_effective_config(cfg, out_dir);

    TrainConfig tc = cfg.training;
    tc.threads = threads;
    tc.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
    tc.log_path = (fs::path(out_dir) / "history.jsonl").string();

    std::cout << "training " << regime_to_string(tc.regime) << " on " << train_ds.size()
              << " sequences (" << val_seqs.size() << " validation)\n";
    const TrainResult res = train(tc, cfg.model, cfg.stft, loss_cfg,
                                  DatasetView::from(train_ds), DatasetView::from(val_seqs));
    if (res.history.aborted) {
        std::cerr << "error: training diverged (non-finite loss); kept best checkpoint\n";
        return kExitError;
    }
    std::cout << "best epoch " << res.history.best_epoch << " val loss "
              << res.history.best_val_loss << "\ncheckpoint: " << tc.checkpoint_path << "\n";
    return 0;
}

int cmd_separate(const std::string& model_path, const std::string& input_path,
                 std::string out_dir, bool report_latency) {
    SeparationModel model;
    AdamState adam;
    try {
        std::tie(model, adam) = load_model(model_path);
    } catch (const std::exception& e) {
        std::cerr << "error: cannot load checkpoint: " << e.what() << "\n";
        return kExitBadCheckpoint;
    }
    if (report_latency)
        std::printf("algorithmic latency: %.1f ms\n", model.stft_config.latency_ms());
    if (input_path.empty()) return 0;

    const AudioClip mixture = read_wav(input_path);
    if (mixture.sample_rate != model.stft_config.sample_rate) {
        std::cerr << "error: input is " << mixture.sample_rate << " Hz but the model requires "
                  << model.stft_config.sample_rate << " Hz; resample the input first\n";
        return kExitSampleRate;
    }
    auto [out1, out2] = separate(model, mixture);

    const fs::path in(input_path);
    const fs::path dir = out_dir.empty() ? in.parent_path() : fs::path(out_dir);
    if (!dir.empty()) fs::create_directories(dir);
    const std::string stem = in.stem().string();
    const fs::path p1 = dir / (stem + ".s1.wav");
    const fs::path p2 = dir / (stem + ".s2.wav");
    write_wav(out1, p1.string());
    write_wav(out2, p2.string());
    std::cout << p1.string() << "\n" << p2.string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& model_path, const std::string& out_dir,
                 const std::string& pairing, std::size_t max_mixtures, bool standard_estoi,
                 const std::string& leakage_manifest, int threads) {
    RunConfig cfg = RunConfig::load(config_path, overrides);
    cfg.validate_modules();
    if (cfg.manifest_path.empty() || !fs::exists(cfg.manifest_path)) {
        std::cerr << "error: manifest not found: " << cfg.manifest_path << "\n";
        return kExitMissingManifest;
    }
    const auto entries = read_manifest(cfg.manifest_path);
    const SplitLists splits = split_lists(entries, cfg.splits);
    if (splits.test.empty()) throw std::runtime_error("test split is empty");

    if (!leakage_manifest.empty()) {
        const auto train_entries = read_manifest(leakage_manifest);
        std::set<std::string> train_paths;
        for (const auto& e : train_entries)
            if (cfg.splits.test_groups.end() == std::find(cfg.splits.test_groups.begin(),
                                                          cfg.splits.test_groups.end(), e.group_id))
                train_paths.insert(e.path);
        for (const auto& e : splits.test)
            if (train_paths.count(e.path)) {
                std::cerr << "error: leakage: test file also appears in the training manifest: "
                          << e.path << "\n";
                return kExitLeakage;
            }
    }

    SeparationModel model;
    AdamState adam;
    try {
        std::tie(model, adam) = load_model(model_path);
    } catch (const std::exception& e) {
        std::cerr << "error: cannot load checkpoint: " << e.what() << "\n";
        return kExitBadCheckpoint;
    }

    MetricConfig metric_cfg;
    if (standard_estoi) {
        metric_cfg = standard_metric_config();
    } else {
        // score with the model's own analysis so the correlation metric is
        // exactly minus the per-source training loss term
        metric_cfg.stft = model.stft_config;
        metric_cfg.loss = model.loss_config;
    }

    const auto pairs = make_test_pairs(splits.test, cfg.speaker_a, cfg.speaker_b, pairing,
                                       max_mixtures);
    std::vector<EvalItem> items;
    for (const auto& p : pairs) {
        EvalItem item;
        item.mixture_id = p.id;
        item.ref1 = resample(read_wav(p.path_a), model.stft_config.sample_rate);
        item.ref2 = resample(read_wav(p.path_b), model.stft_config.sample_rate);
        items.push_back(std::move(item));
    }

    const EvalSummary summary = evaluate(model, items, metric_cfg, cfg.bss_filter_len, threads);

    fs::create_directories(out_dir);
    dump_effective_config(cfg, out_dir);
    write_metric_csv(summary.rows, (fs::path(out_dir) / "report.csv").string());
    write_metric_jsonl(summary.rows, (fs::path(out_dir) / "report.jsonl").string());

    std::printf("%zu mixtures, %zu rows\n", items.size(), summary.rows.size());
    std::printf("        ESTOI  STOI   SDR   SIR   SAR\n");
    std::printf("mean    %5.2f  %4.2f  %5.1f %5.1f %5.1f\n", summary.mean.estoi,
                summary.mean.stoi, summary.mean.sdr_db, summary.mean.sir_db, summary.mean.sar_db);
    std::printf("median  %5.2f  %4.2f  %5.1f %5.1f %5.1f\n", summary.median.estoi,
                summary.median.stoi, summary.median.sdr_db, summary.median.sir_db,
                summary.median.sar_db);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, int instances, const std::string& stage) {
    const auto reports = run_gradcheck(stage, seed, instances);
    bool all_pass = true;
    for (const auto& r : reports) {
        std::printf("stage %-9s max rel err %.3e (threshold %.0e) %s\n", r.stage.c_str(),
                    r.max_rel_err, r.threshold, r.pass ? "PASS" : "FAIL");
        if (!r.pass) {
            std::printf("  worst offender: %s\n", r.worst.c_str());
            all_pass = false;
        }
    }
    return all_pass ? 0 : 1;
}

int cmd_mixgen(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& out_dir, const std::string& split_name, int shifts_flag) {
    RunConfig cfg = RunConfig::load(config_path, overrides);
    cfg.validate_modules();
    if (cfg.manifest_path.empty() || !fs::exists(cfg.manifest_path)) {
        std::cerr << "error: manifest not found: " << cfg.manifest_path << "\n";
        return kExitMissingManifest;
    }
    const auto entries = read_manifest(cfg.manifest_path);
    const SplitLists splits = split_lists(entries, cfg.splits);
    const std::vector<ManifestEntry>* split = &splits.test;
    int default_shifts = 1;  // held-out mixtures use a single alignment
    if (split_name == "train") {
        split = &splits.train;
        default_shifts = cfg.augmentation_shifts;
    } else if (split_name == "val") {
        split = &splits.validation;
    } else if (split_name != "test") {
        throw std::invalid_argument("mixgen: --split must be train, val or test");
    }
    if (split->empty()) throw std::runtime_error("mixgen: split '" + split_name + "' is empty");
    const int shifts = shifts_flag > 0 ? shifts_flag : default_shifts;

    const SpeakerTrack a = build_track(*split, cfg.speaker_a, cfg.stft);
    const SpeakerTrack b = build_track(*split, cfg.speaker_b, cfg.stft);

    fs::create_directories(out_dir);
    dump_effective_config(cfg, out_dir);
    std::ofstream index(fs::path(out_dir) / "index.tsv", std::ios::trunc);
    index << "shift_frames\tmixture\tsource1\tsource2\n";
    int n = 0;
    augment_mixtures(a, b, shifts, [&](const AugmentedMixture& mix) {
        ++n;
        char tag[16];
        std::snprintf(tag, sizeof(tag), "%03d", n);
        const fs::path pm = fs::path(out_dir) / ("mix_" + std::string(tag) + ".wav");
        const fs::path p1 = fs::path(out_dir) / ("s1_" + std::string(tag) + ".wav");
        const fs::path p2 = fs::path(out_dir) / ("s2_" + std::string(tag) + ".wav");
        write_wav(istft(mix.mixture), pm.string());
        write_wav(istft(mix.source1), p1.string());
        write_wav(istft(mix.source2), p2.string());
        index << mix.shift_frames << "\t" << pm.string() << "\t" << p1.string() << "\t"
              << p2.string() << "\n";
    });
    std::cout << "wrote " << n << " mixtures to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-latency two-speaker separation with an ESTOI-style training objective"};
    app.require_subcommand(1);

    std::string config_path, model_path, input_path, stage, pairing = "cross";
    std::string train_out = "out", sep_out, eval_out = "eval", mix_out = "mixtures";
    std::string split_name = "test", leakage_manifest;
    std::vector<std::string> overrides;
    std::string regime_flag, seed_flag;
    int threads_flag = 0, instances = 20, shifts_flag = 0;
    std::size_t max_mixtures = 0;
    std::uint64_t gc_seed = 1;
    bool report_latency = false, standard_estoi = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--set", overrides, "override config values as section.key=value");
        cmd->add_option("--threads", threads_flag,
                        "worker threads (fallback: ESTOI_SEP_THREADS, then hardware)");
    };

    auto* train_cmd = app.add_subcommand("train", "train a separation model from a manifest");
    train_cmd->add_option("--config", config_path, "run configuration file")->required();
    train_cmd->add_option("--regime", regime_flag, "mse | estoi | mse-then-estoi | combined");
    train_cmd->add_option("--seed", seed_flag, "initialization/shuffle seed");
    train_cmd->add_option("--out", train_out, "output directory");
    add_common(train_cmd);

    auto* sep_cmd = app.add_subcommand("separate", "split a mixture WAV into two source WAVs");
    sep_cmd->add_option("--model", model_path, "model checkpoint")->required();
    sep_cmd->add_option("--input", input_path, "mixture WAV");
    sep_cmd->add_option("--out-dir", sep_out, "output directory (default: alongside input)");
    sep_cmd->add_flag("--report-latency", report_latency,
                      "print the analysis-synthesis latency in ms");

    auto* eval_cmd = app.add_subcommand("evaluate", "score a model on the test split");
    eval_cmd->add_option("--config", config_path, "run configuration file")->required();
    eval_cmd->add_option("--model", model_path, "model checkpoint")->required();
    eval_cmd->add_option("--out", eval_out, "output directory");
    eval_cmd->add_option("--pairing", pairing, "cross | zip (default cross)");
    eval_cmd->add_option("--max-mixtures", max_mixtures, "cap the number of test mixtures");
    eval_cmd->add_flag("--standard-estoi", standard_estoi,
                       "use the classic 10 kHz metric configuration");
    eval_cmd->add_option("--check-leakage", leakage_manifest,
                         "training manifest to check for file overlap");
    add_common(eval_cmd);

    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc_cmd->add_option("--seed", gc_seed, "random seed");
    gc_cmd->add_option("--instances", instances, "random instances per stage");
    gc_cmd->add_option("--stage", stage, "normalize | band | loss | mse | network");

    auto* mix_cmd = app.add_subcommand("mixgen", "materialize augmented mixtures as WAV files");
    mix_cmd->add_option("--config", config_path, "run configuration file")->required();
    mix_cmd->add_option("--out", mix_out, "output directory");
    mix_cmd->add_option("--split", split_name, "train | val | test (default test)");
    mix_cmd->add_option("--shifts", shifts_flag, "number of circular shifts");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            if (!regime_flag.empty()) overrides.push_back("training.regime=" + regime_flag);
            if (!seed_flag.empty()) overrides.push_back("training.seed=" + seed_flag);
            return cmd_train(config_path, overrides, train_out, resolve_threads(threads_flag));
        }
        if (sep_cmd->parsed())
            return cmd_separate(model_path, input_path, sep_out, report_latency);
        if (eval_cmd->parsed())
            return cmd_evaluate(config_path, overrides, model_path, eval_out, pairing,
                                max_mixtures, standard_estoi, leakage_manifest,
                                resolve_threads(threads_flag));
        if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, instances, stage);
        if (mix_cmd->parsed())
            return cmd_mixgen(config_path, overrides, mix_out, split_name, shifts_flag);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
