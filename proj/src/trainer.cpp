#include "estoisep/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "estoisep/rng.hpp"

namespace estoisep {

namespace {

LossOutput dispatch_loss(Regime active, double alpha, const ForwardResult& fwd,
                         const MixtureSequence& seq, const EstoiLossConfig& loss_config) {
    switch (active) {
        case Regime::Mse:
            return mse_loss(fwd.est1, fwd.est2, seq.target1_mags, seq.target2_mags);
        case Regime::Estoi:
            return estoi_loss(fwd.est1, fwd.est2, seq.target1_mags, seq.target2_mags, loss_config);
        case Regime::Combined:
            return combined_loss(fwd.est1, fwd.est2, seq.target1_mags, seq.target2_mags, alpha,
                                 loss_config);
        case Regime::MseThenEstoi:
            break;
    }
    throw std::logic_error("dispatch_loss: mse-then-estoi is a schedule, not a loss");
}

struct ItemResult {
    double loss = 0.0;
    ModelGrads grads;
};

// Forward/backward for a contiguous index range of batch items; results land
// in per-item slots so the reduction order stays fixed regardless of threads.
void run_items(const SeparationModel& model, Regime active, double alpha,
               const DatasetView& data, const std::vector<std::size_t>& indices,
               std::size_t begin, std::size_t end, std::size_t out_base,
               std::vector<ItemResult>& out) {
    for (std::size_t i = begin; i < end; ++i) {
        const MixtureSequence seq = data.fetch(indices[i]);
        const ForwardResult fwd = forward(model, seq.mixture_mags);
        const LossOutput loss = dispatch_loss(active, alpha, fwd, seq, model.loss_config);
        out[i - out_base].loss = loss.value;
        out[i - out_base].grads = backward(model, fwd.tape, loss.grad_source1, loss.grad_source2);
    }
}

double validation_loss(const SeparationModel& model, Regime active, double alpha,
                       const DatasetView& val_data) {
    double acc = 0.0;
    for (std::size_t i = 0; i < val_data.count; ++i) {
        const MixtureSequence seq = val_data.fetch(i);
        const ForwardResult fwd = forward(model, seq.mixture_mags);
        acc += dispatch_loss(active, alpha, fwd, seq, model.loss_config).value;
    }
    return acc / static_cast<double>(val_data.count);
}

void append_log(const std::string& path, const EpochRecord& rec) {
    if (path.empty()) return;
    std::ofstream f(path, std::ios::app);
    nlohmann::json j = {{"epoch", rec.epoch},
                        {"phase", rec.phase},
                        {"train_loss", rec.train_loss},
                        {"val_loss", rec.val_loss},
                        {"wall_ms", rec.wall_ms}};
    f << j.dump() << "\n";
}

}  // namespace

Regime regime_from_string(const std::string& name) {
    if (name == "mse") return Regime::Mse;
    if (name == "estoi") return Regime::Estoi;
    if (name == "mse-then-estoi") return Regime::MseThenEstoi;
    if (name == "combined") return Regime::Combined;
    throw std::invalid_argument("unknown regime '" + name +
                                "' (expected mse, estoi, mse-then-estoi or combined)");
}

std::string regime_to_string(Regime regime) {
    switch (regime) {
        case Regime::Mse: return "mse";
        case Regime::Estoi: return "estoi";
        case Regime::MseThenEstoi: return "mse-then-estoi";
        case Regime::Combined: return "combined";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (alpha < 0.0) throw std::invalid_argument("TrainConfig: alpha must be >= 0");
}

DatasetView DatasetView::from(const std::vector<MixtureSequence>& seqs) {
    DatasetView v;
    v.count = seqs.size();
    v.fetch = [&seqs](std::size_t i) { return seqs[i]; };
    return v;
}

DatasetView DatasetView::from(const SequenceDataset& ds) {
    DatasetView v;
    v.count = ds.size();
    v.fetch = [&ds](std::size_t i) { return ds.materialize(i); };
    return v;
}

TrainResult train_phase(SeparationModel model, AdamState adam, const TrainConfig& config,
                        Regime active_loss, const DatasetView& train_data,
                        const DatasetView& val_data, const std::string& phase_name,
                        TrainHistory* carry_history) {
    config.validate();
    if (train_data.count == 0 || val_data.count == 0)
        throw std::invalid_argument("train: empty training or validation set");

    TrainResult result;
    if (carry_history) result.history = *carry_history;
    result.model = model;
    result.adam = adam;

    EarlyStopper stopper(config.patience);
    Rng shuffle_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

    std::vector<std::size_t> order(train_data.count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    const int threads = std::max(1, config.threads);
    bool have_best = false;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order.begin(), order.end());
        std::size_t epoch_items = order.size();
        if (config.max_sequences_per_epoch > 0)
            epoch_items = std::min(epoch_items, config.max_sequences_per_epoch);

        double epoch_loss = 0.0;
        bool diverged = false;
        for (std::size_t batch_start = 0; batch_start < epoch_items && !diverged;
             batch_start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t batch_end =
                std::min(epoch_items, batch_start + static_cast<std::size_t>(config.batch_size));
            const std::size_t batch_n = batch_end - batch_start;

            std::vector<ItemResult> results(batch_n);
            if (threads == 1 || batch_n == 1) {
                run_items(model, active_loss, config.alpha, train_data, order, batch_start,
                          batch_end, batch_start, results);
            } else {
                const std::size_t per = (batch_n + threads - 1) / static_cast<std::size_t>(threads);
                std::vector<std::thread> pool;
                for (int w = 0; w < threads; ++w) {
                    const std::size_t lo = batch_start + static_cast<std::size_t>(w) * per;
                    const std::size_t hi = std::min(batch_end, lo + per);
                    if (lo >= hi) break;
                    pool.emplace_back(run_items, std::cref(model), active_loss, config.alpha,
                                      std::cref(train_data), std::cref(order), lo, hi, batch_start,
                                      std::ref(results));
                }
                for (auto& t : pool) t.join();
            }

            ModelGrads batch_grads = zero_grads(model);
            double batch_loss = 0.0;
            for (std::size_t i = 0; i < batch_n; ++i) {
                batch_grads.accumulate(results[i].grads);
                batch_loss += results[i].loss;
            }
            batch_grads.scale(1.0 / static_cast<double>(batch_n));
            batch_loss /= static_cast<double>(batch_n);
            epoch_loss += batch_loss * static_cast<double>(batch_n);

            if (!std::isfinite(batch_loss) || !batch_grads.all_finite()) {
                diverged = true;
                break;
            }
            clip_global_norm(batch_grads, config.grad_clip_norm);
            adam_step(model, batch_grads, adam);
        }

        if (diverged) {
            result.history.aborted = true;
            break;
        }

        EpochRecord rec;
        rec.epoch = static_cast<int>(result.history.epochs.size());
        rec.phase = phase_name;
        rec.train_loss = epoch_loss / static_cast<double>(epoch_items);
        rec.val_loss = validation_loss(model, active_loss, config.alpha, val_data);
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
        result.history.epochs.push_back(rec);
        append_log(config.log_path, rec);

        if (!std::isfinite(rec.val_loss)) {
            result.history.aborted = true;
            break;
        }

        const bool improved = rec.val_loss < stopper.best;
        const bool stop = stopper.observe(rec.epoch, rec.val_loss);
        if (improved) {
            result.model = model;
            result.adam = adam;
            result.history.best_epoch = rec.epoch;
            result.history.best_val_loss = rec.val_loss;
            have_best = true;
        }
        if (stop) break;
    }

    if (!have_best) {
        // no epoch completed (divergence before the first validation pass):
        // hand back the initial weights
        result.model = std::move(model);
        result.adam = std::move(adam);
    }
    return result;
}

TrainResult train(const TrainConfig& config, const ModelSpec& spec, const StftConfig& stft_config,
                  const EstoiLossConfig& loss_config, const DatasetView& train_data,
                  const DatasetView& val_data) {
    config.validate();
    SeparationModel model = make_model(stft_config, loss_config, spec.num_layers, spec.hidden_dim,
                                       spec.sequence_length, config.seed);
    AdamState adam = make_adam_state(model, config.learning_rate);

    if (config.regime != Regime::MseThenEstoi) {
        TrainResult res = train_phase(std::move(model), std::move(adam), config, config.regime,
                                      train_data, val_data, regime_to_string(config.regime));
        if (!config.checkpoint_path.empty()) save_model(res.model, res.adam, config.checkpoint_path);
        return res;
    }

    TrainResult phase1 = train_phase(std::move(model), std::move(adam), config, Regime::Mse,
                                     train_data, val_data, "mse");
    AdamState phase2_adam = config.keep_optimizer_state
                                ? phase1.adam
                                : make_adam_state(phase1.model, config.learning_rate);
    TrainResult res = train_phase(phase1.model, std::move(phase2_adam), config, Regime::Estoi,
                                  train_data, val_data, "estoi", &phase1.history);
    if (!config.checkpoint_path.empty()) save_model(res.model, res.adam, config.checkpoint_path);
    return res;
}

Mat separation_masks(const SeparationModel& model, const ComplexSpectrogram& mixture_spec) {
    const std::size_t fbins = static_cast<std::size_t>(model.freq_bins());
    const std::size_t frames = mixture_spec.frames;
    const std::size_t seq_len = static_cast<std::size_t>(model.sequence_length);
    const MagnitudeSpectrogram mags = magnitude(mixture_spec);

    Mat masks(fbins, frames);
    for (std::size_t start = 0; start < frames; start += seq_len) {
        const std::size_t valid = std::min(seq_len, frames - start);
        MagnitudeSpectrogram chunk;
        chunk.config = mixture_spec.config;
        chunk.mags = Mat(fbins, seq_len);  // trailing window zero-padded
        for (std::size_t f = 0; f < fbins; ++f)
            for (std::size_t k = 0; k < valid; ++k) chunk.mags(f, k) = mags.mags(f, start + k);
        const ForwardResult fwd = forward(model, chunk);
        for (std::size_t f = 0; f < fbins; ++f)
            for (std::size_t k = 0; k < valid; ++k) masks(f, start + k) = fwd.mask(f, k);
    }
    return masks;
}

std::pair<AudioClip, AudioClip> separate(const SeparationModel& model, const AudioClip& mixture) {
    model.validate();
    if (mixture.sample_rate != model.stft_config.sample_rate)
        throw std::invalid_argument("separate: mixture is " + std::to_string(mixture.sample_rate) +
                                    " Hz but the model needs " +
                                    std::to_string(model.stft_config.sample_rate) + " Hz");
    const std::size_t n = mixture.samples.size();
    if (n == 0) throw std::invalid_argument("separate: empty mixture");
    const std::size_t wl = static_cast<std::size_t>(model.stft_config.window_length);
    const std::size_t hop = static_cast<std::size_t>(model.stft_config.hop);

    // pad so every input sample is covered by a frame
    std::size_t frames = n <= wl ? 1 : (n - wl + hop - 1) / hop + 1;
    const std::size_t padded_len = (frames - 1) * hop + wl;
    AudioClip padded = mixture;
    padded.samples.resize(padded_len, 0.0);

    const ComplexSpectrogram spec = stft(padded, model.stft_config);
    const Mat masks = separation_masks(model, spec);
    const std::size_t fbins = static_cast<std::size_t>(model.freq_bins());

    ComplexSpectrogram est1 = spec, est2 = spec;
    for (std::size_t f = 0; f < fbins; ++f)
        for (std::size_t t = 0; t < spec.frames; ++t) {
            est1.at(f, t) = spec.at(f, t) * masks(f, t);
            est2.at(f, t) = spec.at(f, t) - est1.at(f, t);
        }

    AudioClip out1 = istft(est1);
    AudioClip out2 = istft(est2);
    out1.samples.resize(n);
    out2.samples.resize(n);
    return {std::move(out1), std::move(out2)};
}

EvalSummary evaluate(const SeparationModel& model, const std::vector<EvalItem>& items,
                     const MetricConfig& metric_config, int bss_filter_len, int threads) {
    if (items.empty()) throw std::invalid_argument("evaluate: empty test set");

    EvalSummary summary;
    summary.rows.resize(items.size() * 2);

    auto eval_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto& item = items[i];
            const std::size_t len = std::min(item.ref1.samples.size(), item.ref2.samples.size());
            AudioClip ref1 = item.ref1, ref2 = item.ref2;
            ref1.samples.resize(len);
            ref2.samples.resize(len);
            AudioClip mixture;
            mixture.sample_rate = ref1.sample_rate;
            mixture.samples.resize(len);
            for (std::size_t s = 0; s < len; ++s)
                mixture.samples[s] = ref1.samples[s] + ref2.samples[s];

            auto [out1, out2] = separate(model, mixture);
            const auto [bss1, bss2] = bss_eval(ref1, ref2, out1, out2, bss_filter_len);

            MetricReport r1, r2;
            r1.mixture_id = item.mixture_id;
            r1.source = 1;
            r1.estoi = estoi_metric(ref1, out1, metric_config);
            r1.stoi = stoi_metric(ref1, out1, metric_config);
            r1.sdr_db = bss1.sdr_db;
            r1.sir_db = bss1.sir_db;
            r1.sar_db = bss1.sar_db;
            r2.mixture_id = item.mixture_id;
            r2.source = 2;
            r2.estoi = estoi_metric(ref2, out2, metric_config);
            r2.stoi = stoi_metric(ref2, out2, metric_config);
            r2.sdr_db = bss2.sdr_db;
            r2.sir_db = bss2.sir_db;
            r2.sar_db = bss2.sar_db;
            summary.rows[2 * i] = std::move(r1);
            summary.rows[2 * i + 1] = std::move(r2);
        }
    };

    const int workers = std::max(1, threads);
    if (workers == 1 || items.size() == 1) {
        eval_range(0, items.size());
    } else {
        const std::size_t per = (items.size() + workers - 1) / static_cast<std::size_t>(workers);
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            const std::size_t lo = static_cast<std::size_t>(w) * per;
            const std::size_t hi = std::min(items.size(), lo + per);
            if (lo >= hi) break;
            pool.emplace_back(eval_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    auto aggregate = [&summary](auto pick) {
        std::vector<double> vals;
        vals.reserve(summary.rows.size());
        for (const auto& r : summary.rows) vals.push_back(pick(r));
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        std::sort(vals.begin(), vals.end());
        const std::size_t mid = vals.size() / 2;
        const double median =
            vals.size() % 2 == 1 ? vals[mid] : 0.5 * (vals[mid - 1] + vals[mid]);
        return std::make_pair(mean, median);
    };

    summary.mean.mixture_id = "mean";
    summary.median.mixture_id = "median";
    summary.mean.source = summary.median.source = 0;
    std::tie(summary.mean.estoi, summary.median.estoi) =
        aggregate([](const MetricReport& r) { return r.estoi; });
    std::tie(summary.mean.stoi, summary.median.stoi) =
        aggregate([](const MetricReport& r) { return r.stoi; });
    std::tie(summary.mean.sdr_db, summary.median.sdr_db) =
        aggregate([](const MetricReport& r) { return r.sdr_db; });
    std::tie(summary.mean.sir_db, summary.median.sir_db) =
        aggregate([](const MetricReport& r) { return r.sir_db; });
    std::tie(summary.mean.sar_db, summary.median.sar_db) =
        aggregate([](const MetricReport& r) { return r.sar_db; });
    return summary;
}

}  // namespace estoisep
