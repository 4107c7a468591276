#include "estoisep/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "estoisep/loss.hpp"
#include "estoisep/neural.hpp"
#include "estoisep/rng.hpp"

namespace estoisep {

namespace {

constexpr double kFdFloor = 1e-10;  // ignore coordinates with tinier central differences

struct Tracker {
    double floor = kFdFloor;  // coordinates below this elude the oracle
    double max_rel = 0.0;
    std::string worst;

    void observe(double analytic, double fd, const std::string& where) {
        if (std::abs(fd) < floor && std::abs(analytic) < floor) return;
        const double rel = std::abs(analytic - fd) / std::max({std::abs(fd), std::abs(analytic), floor});
        if (rel > max_rel) {
            max_rel = rel;
            worst = where;
        }
    }
};

double central_difference(std::vector<double>& storage, std::size_t index,
                          const std::function<double()>& eval, double rel_step = 1e-6) {
    const double x0 = storage[index];
    const double h = rel_step * std::max(1.0, std::abs(x0));
    storage[index] = x0 + h;
    const double fp = eval();
    storage[index] = x0 - h;
    const double fm = eval();
    storage[index] = x0;
    return (fp - fm) / (2.0 * h);
}

// fourth-order stencil for the through-the-network stage, where parameter
// gradients span several orders of magnitude and a plain central difference
// drowns the small ones in cancellation noise
double central_difference4(std::vector<double>& storage, std::size_t index,
                           const std::function<double()>& eval) {
    const double x0 = storage[index];
    const double h = 1e-4 * std::max(1.0, std::abs(x0));
    const auto at = [&](double x) {
        storage[index] = x;
        return eval();
    };
    const double f1 = at(x0 + h);
    const double f2 = at(x0 - h);
    const double f3 = at(x0 + 2.0 * h);
    const double f4 = at(x0 - 2.0 * h);
    storage[index] = x0;
    return (8.0 * (f1 - f2) - (f3 - f4)) / (12.0 * h);
}

Mat random_positive(std::size_t rows, std::size_t cols, Rng& rng) {
    Mat m(rows, cols);
    for (double& v : m.a) v = rng.uniform(0.1, 2.0);
    return m;
}

OctaveBandConfig random_bands(int fbins, int num_bands, Rng& rng) {
    // split bins [1, fbins-1] into num_bands contiguous non-empty ranges
    OctaveBandConfig cfg;
    cfg.fft_size = 2 * (fbins - 1);
    cfg.sample_rate = 16000;
    std::vector<int> candidates;
    for (int b = 2; b <= fbins - 1; ++b) candidates.push_back(b);
    rng.shuffle(candidates.begin(), candidates.end());
    std::vector<int> cuts(candidates.begin(), candidates.begin() + (num_bands - 1));
    std::sort(cuts.begin(), cuts.end());
    int start = 1;
    for (int j = 0; j < num_bands; ++j) {
        const int end = j + 1 < num_bands ? cuts[static_cast<std::size_t>(j)] - 1 : fbins - 1;
        cfg.band_edges.emplace_back(start, end);
        start = end + 1;
    }
    return cfg;
}

GradCheckReport check_normalize(std::uint64_t seed, int instances) {
    GradCheckReport report{"normalize", 0.0, 1e-6, false, ""};
    Rng rng(seed);
    Tracker tracker;
    for (int inst = 0; inst < instances; ++inst) {
        const std::size_t rows = 2 + rng.below(5);
        const std::size_t cols = 3 + rng.below(6);
        Mat seg = random_positive(rows, cols, rng);
        Mat weights(rows, cols);
        for (double& v : weights.a) v = rng.uniform(-1.0, 1.0);

        const Mat analytic = normalize_segment_vjp(seg, weights, 1e-9);
        for (std::size_t i = 0; i < seg.a.size(); ++i) {
            const double fd = central_difference(seg.a, i, [&] {
                const Mat normalized = normalize_segment(seg, 1e-9);
                double acc = 0.0;
                for (std::size_t k = 0; k < normalized.a.size(); ++k)
                    acc += normalized.a[k] * weights.a[k];
                return acc;
            });
            tracker.observe(analytic.a[i], fd,
                            "normalize inst " + std::to_string(inst) + " flat " + std::to_string(i));
        }
    }
    report.max_rel_err = tracker.max_rel;
    report.worst = tracker.worst;
    report.pass = tracker.max_rel < report.threshold;
    return report;
}

GradCheckReport check_band(std::uint64_t seed, int instances) {
    GradCheckReport report{"band", 0.0, 1e-6, false, ""};
    Rng rng(seed + 1);
    Tracker tracker;
    for (int inst = 0; inst < instances; ++inst) {
        const int fbins = 6 + static_cast<int>(rng.below(7));
        const int bands = 2 + static_cast<int>(rng.below(3));
        const std::size_t frames = 4 + rng.below(6);
        const OctaveBandConfig cfg = random_bands(fbins, bands, rng);
        Mat mags = random_positive(static_cast<std::size_t>(fbins), frames, rng);
        Mat weights(static_cast<std::size_t>(bands), frames);
        for (double& v : weights.a) v = rng.uniform(-1.0, 1.0);

        const Mat analytic = band_decompose_vjp(mags, cfg, weights);
        MagnitudeSpectrogram spec;
        spec.config.fft_size = cfg.fft_size;
        spec.config.window_length = cfg.fft_size;
        spec.config.hop = cfg.fft_size / 2;
        spec.config.sample_rate = cfg.sample_rate;
        for (std::size_t i = 0; i < mags.a.size(); ++i) {
            const double fd = central_difference(mags.a, i, [&] {
                spec.mags = mags;
                const OctaveBandMatrix bandsm = band_decompose(spec, cfg);
                double acc = 0.0;
                for (std::size_t k = 0; k < bandsm.values.a.size(); ++k)
                    acc += bandsm.values.a[k] * weights.a[k];
                return acc;
            });
            tracker.observe(analytic.a[i], fd,
                            "band inst " + std::to_string(inst) + " flat " + std::to_string(i));
        }
    }
    report.max_rel_err = tracker.max_rel;
    report.worst = tracker.worst;
    report.pass = tracker.max_rel < report.threshold;
    return report;
}

struct LossInstance {
    EstoiLossConfig config;
    MagnitudeSpectrogram est1, est2, tgt1, tgt2;
};

LossInstance random_loss_instance(Rng& rng) {
    LossInstance li;
    const int fbins = 6 + static_cast<int>(rng.below(7));     // <= 12
    const std::size_t frames = 8 + rng.below(9);              // <= 16
    const int bands = 2 + static_cast<int>(rng.below(3));     // <= 4
    const int n = 3 + static_cast<int>(rng.below(4));         // <= 6
    li.config.band_config = random_bands(fbins, bands, rng);
    li.config.segment_frames = n;
    StftConfig stft_cfg;
    stft_cfg.fft_size = li.config.band_config.fft_size;
    stft_cfg.window_length = stft_cfg.fft_size;
    stft_cfg.hop = stft_cfg.fft_size / 2;
    li.est1.config = li.est2.config = li.tgt1.config = li.tgt2.config = stft_cfg;
    li.est1.mags = random_positive(static_cast<std::size_t>(fbins), frames, rng);
    li.est2.mags = random_positive(static_cast<std::size_t>(fbins), frames, rng);
    li.tgt1.mags = random_positive(static_cast<std::size_t>(fbins), frames, rng);
    li.tgt2.mags = random_positive(static_cast<std::size_t>(fbins), frames, rng);
    return li;
}

GradCheckReport check_loss(std::uint64_t seed, int instances) {
    GradCheckReport report{"loss", 0.0, 1e-6, false, ""};
    Rng rng(seed + 2);
    Tracker tracker;
    for (int inst = 0; inst < instances; ++inst) {
        LossInstance li = random_loss_instance(rng);
        const LossOutput out = estoi_loss(li.est1, li.est2, li.tgt1, li.tgt2, li.config);
        auto eval = [&] { return estoi_loss(li.est1, li.est2, li.tgt1, li.tgt2, li.config).value; };
        for (std::size_t i = 0; i < li.est1.mags.a.size(); ++i) {
            const double fd = central_difference(li.est1.mags.a, i, eval);
            tracker.observe(out.grad_source1.a[i], fd,
                            "loss inst " + std::to_string(inst) + " est1 flat " + std::to_string(i));
        }
        for (std::size_t i = 0; i < li.est2.mags.a.size(); ++i) {
            const double fd = central_difference(li.est2.mags.a, i, eval);
            tracker.observe(out.grad_source2.a[i], fd,
                            "loss inst " + std::to_string(inst) + " est2 flat " + std::to_string(i));
        }
    }
    report.max_rel_err = tracker.max_rel;
    report.worst = tracker.worst;
    report.pass = tracker.max_rel < report.threshold;
    return report;
}

GradCheckReport check_mse(std::uint64_t seed, int instances) {
    GradCheckReport report{"mse", 0.0, 1e-8, false, ""};
    Rng rng(seed + 3);
    Tracker tracker;
    for (int inst = 0; inst < instances; ++inst) {
        LossInstance li = random_loss_instance(rng);
        const LossOutput out = mse_loss(li.est1, li.est2, li.tgt1, li.tgt2);
        auto eval = [&] { return mse_loss(li.est1, li.est2, li.tgt1, li.tgt2).value; };
        for (std::size_t i = 0; i < li.est1.mags.a.size(); ++i) {
            // quadratic loss: a wide step is exact and dodges cancellation
            const double fd = central_difference(li.est1.mags.a, i, eval, 1e-3);
            tracker.observe(out.grad_source1.a[i], fd,
                            "mse inst " + std::to_string(inst) + " est1 flat " + std::to_string(i));
        }
    }
    report.max_rel_err = tracker.max_rel;
    report.worst = tracker.worst;
    report.pass = tracker.max_rel < report.threshold;
    return report;
}

GradCheckReport check_network(std::uint64_t seed, int instances) {
    GradCheckReport report{"network", 0.0, 1e-5, false, ""};
    Rng rng(seed + 4);
    Tracker tracker;
    // parameter gradients span many decades; below ~1e-5 the double-precision
    // stencil is all cancellation noise, so such coordinates are skipped
    tracker.floor = 1e-5;
    for (int inst = 0; inst < std::max(1, instances / 4); ++inst) {
        // F=6 spectrogram, 1 LSTM layer of 8 units, T=10, J=2, N=3
        StftConfig stft_cfg;
        stft_cfg.window_length = 10;
        stft_cfg.hop = 5;
        stft_cfg.fft_size = 10;
        EstoiLossConfig loss_cfg;
        loss_cfg.band_config.fft_size = 10;
        loss_cfg.band_config.sample_rate = 16000;
        loss_cfg.band_config.band_edges = {{1, 2}, {3, 5}};
        loss_cfg.segment_frames = 3;
        SeparationModel model =
            make_model(stft_cfg, loss_cfg, 1, 8, 10, seed + static_cast<std::uint64_t>(inst));

        const std::size_t frames = 10;
        MagnitudeSpectrogram mix, tgt1, tgt2;
        mix.config = tgt1.config = tgt2.config = stft_cfg;
        mix.mags = random_positive(6, frames, rng);
        tgt1.mags = random_positive(6, frames, rng);
        tgt2.mags = random_positive(6, frames, rng);

        for (const bool use_mse : {false, true}) {
            auto eval = [&] {
                const ForwardResult fwd = forward(model, mix);
                return use_mse ? mse_loss(fwd.est1, fwd.est2, tgt1, tgt2).value
                               : estoi_loss(fwd.est1, fwd.est2, tgt1, tgt2, loss_cfg).value;
            };
            const ForwardResult fwd = forward(model, mix);
            const LossOutput loss = use_mse
                                        ? mse_loss(fwd.est1, fwd.est2, tgt1, tgt2)
                                        : estoi_loss(fwd.est1, fwd.est2, tgt1, tgt2, loss_cfg);
            const ModelGrads grads = backward(model, fwd.tape, loss.grad_source1, loss.grad_source2);
            const auto slots = parameter_tensors(model);
            const auto grad_slots = gradient_tensors(grads);
            for (std::size_t s = 0; s < slots.size(); ++s) {
                Vec& params = *slots[s].second;
                const Vec& analytic = *grad_slots[s].second;
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const double fd = central_difference4(params, i, eval);
                    tracker.observe(analytic[i], fd,
                                    std::string(use_mse ? "mse" : "estoi") + " net inst " +
                                        std::to_string(inst) + " " + slots[s].first + "[" +
                                        std::to_string(i) + "]");
                }
            }
        }
    }
    report.max_rel_err = tracker.max_rel;
    report.worst = tracker.worst;
    report.pass = tracker.max_rel < report.threshold;
    return report;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck(const std::string& stage_filter, std::uint64_t seed,
                                           int instances) {
    std::vector<GradCheckReport> reports;
    auto wanted = [&](const char* name) {
        return stage_filter.empty() || stage_filter == name;
    };
    if (wanted("normalize")) reports.push_back(check_normalize(seed, instances));
    if (wanted("band")) reports.push_back(check_band(seed, instances));
    if (wanted("loss")) reports.push_back(check_loss(seed, instances));
    if (wanted("mse")) reports.push_back(check_mse(seed, instances));
    if (wanted("network")) reports.push_back(check_network(seed, instances));
    if (reports.empty())
        throw std::invalid_argument("gradcheck: unknown stage '" + stage_filter +
                                    "' (expected normalize, band, loss, mse or network)");
    return reports;
}

}  // namespace estoisep
