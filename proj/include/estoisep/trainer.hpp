#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "estoisep/data.hpp"
#include "estoisep/metrics.hpp"
#include "estoisep/neural.hpp"

namespace estoisep {

enum class Regime { Mse, Estoi, MseThenEstoi, Combined };

Regime regime_from_string(const std::string& name);
std::string regime_to_string(Regime regime);

struct TrainConfig {
    Regime regime = Regime::Mse;
    double alpha = 1.0;  // weight of the correlation term in the combined loss
    int max_epochs = 200;
    int patience = 30;
    int batch_size = 8;
    std::uint64_t seed = 1;
    double learning_rate = 1e-3;
    double grad_clip_norm = 5.0;
    bool keep_optimizer_state = false;  // carry Adam moments into the second phase
    int threads = 1;
    std::size_t max_sequences_per_epoch = 0;  // 0 = use every sequence
    std::string checkpoint_path;
    std::string log_path;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    std::string phase;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;  // index into epochs
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool aborted = false;  // non-finite loss encountered
};

/// Stop when validation loss has not strictly improved for `patience`
/// consecutive epochs.
struct EarlyStopper {
    int patience = 30;
    double best = std::numeric_limits<double>::infinity();
    int best_index = -1;
    int stale = 0;

    explicit EarlyStopper(int patience_epochs) : patience(patience_epochs) {}
    /// Returns true when training should stop after this observation.
    bool observe(int index, double val_loss) {
        if (val_loss < best) {
            best = val_loss;
            best_index = index;
            stale = 0;
            return false;
        }
        ++stale;
        return stale >= patience;
    }
};

/// Uniform view over materialized or lazily generated sequence sets.
struct DatasetView {
    std::size_t count = 0;
    std::function<MixtureSequence(std::size_t)> fetch;

    static DatasetView from(const std::vector<MixtureSequence>& seqs);
    static DatasetView from(const SequenceDataset& ds);
};

struct ModelSpec {
    int num_layers = 3;
    int hidden_dim = 512;
    int sequence_length = 256;
};

struct TrainResult {
    SeparationModel model;
    AdamState adam;
    TrainHistory history;
};

/// One optimization phase under a fixed loss, starting from the given
/// weights. Returns the best-validation checkpoint.
TrainResult train_phase(SeparationModel model, AdamState adam, const TrainConfig& config,
                        Regime active_loss, const DatasetView& train_data,
                        const DatasetView& val_data, const std::string& phase_name,
                        TrainHistory* carry_history = nullptr);

/// Full training entry point; mse-then-estoi chains two phases, handing the
/// best mse weights to the correlation phase (optimizer state reset unless
/// keep_optimizer_state is set).
TrainResult train(const TrainConfig& config, const ModelSpec& spec, const StftConfig& stft_config,
                  const EstoiLossConfig& loss_config, const DatasetView& train_data,
                  const DatasetView& val_data);

/// Masks for an arbitrary-length mixture, computed in sequence-length
/// windows with the trailing partial window zero-padded.
Mat separation_masks(const SeparationModel& model, const ComplexSpectrogram& mixture_spec);

/// Full separation: STFT, windowed forward, mixture-phase ISTFT. Outputs
/// have exactly the input length.
std::pair<AudioClip, AudioClip> separate(const SeparationModel& model, const AudioClip& mixture);

struct EvalItem {
    std::string mixture_id;
    AudioClip ref1;
    AudioClip ref2;
};

struct EvalSummary {
    std::vector<MetricReport> rows;  // two per mixture
    MetricReport mean;               // pooled over all rows
    MetricReport median;
};

/// Mixes each item's references at 0 dB, separates, and scores with all
/// five metrics. Estimates keep their training order (no permutation
/// matching).
EvalSummary evaluate(const SeparationModel& model, const std::vector<EvalItem>& items,
                     const MetricConfig& metric_config, int bss_filter_len = 512, int threads = 1);

}  // namespace estoisep
