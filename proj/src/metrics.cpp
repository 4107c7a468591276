#include "estoisep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "estoisep/fft.hpp"
#include "estoisep/octave.hpp"

namespace estoisep {

namespace {

constexpr double kDbSentinel = 100.0;  // energy ratios above this report +inf

std::pair<Mat, Mat> metric_spectrograms(const AudioClip& reference, const AudioClip& estimate,
                                        const MetricConfig& config) {
    if (reference.sample_rate != estimate.sample_rate)
        throw std::invalid_argument("metric: sample rates differ");
    AudioClip ref = reference, est = estimate;
    if (ref.sample_rate != config.stft.sample_rate) {
        ref = resample(ref, config.stft.sample_rate);
        est = resample(est, config.stft.sample_rate);
    }
    const std::size_t n = std::min(ref.samples.size(), est.samples.size());
    ref.samples.resize(n);
    est.samples.resize(n);

    Mat ref_mags = magnitude(stft(ref, config.stft)).mags;
    Mat est_mags = magnitude(stft(est, config.stft)).mags;

    if (config.remove_silent_frames) {
        // frame energy of the reference decides which frames both keep
        const std::size_t frames = ref_mags.cols;
        std::vector<double> energy(frames, 0.0);
        double peak = 0.0;
        for (std::size_t t = 0; t < frames; ++t) {
            for (std::size_t f = 0; f < ref_mags.rows; ++f)
                energy[t] += ref_mags(f, t) * ref_mags(f, t);
            peak = std::max(peak, energy[t]);
        }
        const double floor_energy = peak * std::pow(10.0, -config.silence_threshold_db / 10.0);
        std::vector<std::size_t> keep;
        for (std::size_t t = 0; t < frames; ++t)
            if (energy[t] > floor_energy) keep.push_back(t);
        if (keep.size() < ref_mags.cols) {
            Mat r2(ref_mags.rows, keep.size()), e2(est_mags.rows, keep.size());
            for (std::size_t f = 0; f < ref_mags.rows; ++f)
                for (std::size_t k = 0; k < keep.size(); ++k) {
                    r2(f, k) = ref_mags(f, keep[k]);
                    e2(f, k) = est_mags(f, keep[k]);
                }
            ref_mags = std::move(r2);
            est_mags = std::move(e2);
        }
    }
    return {std::move(ref_mags), std::move(est_mags)};
}

double energy(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}

double ratio_db(double num, double den) {
    if (den <= num * std::pow(10.0, -kDbSentinel / 10.0))
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(num / den);
}

// Solve A x = b for symmetric positive definite A (in-place Cholesky with
// a small escalating ridge if the factorization stalls).
std::vector<double> solve_spd(Mat a, std::vector<double> b) {
    const std::size_t n = a.rows;
    double ridge = 0.0;
    double trace = 0.0;
    for (std::size_t i = 0; i < n; ++i) trace += a(i, i);
    const double base = trace > 0.0 ? trace / static_cast<double>(n) : 1.0;
    for (int attempt = 0; attempt < 6; ++attempt) {
        Mat l = a;
        if (ridge > 0.0)
            for (std::size_t i = 0; i < n; ++i) l(i, i) += ridge;
        bool ok = true;
        for (std::size_t j = 0; j < n && ok; ++j) {
            double d = l(j, j);
            for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
            if (d <= 0.0) {
                ok = false;
                break;
            }
            const double root = std::sqrt(d);
            l(j, j) = root;
            for (std::size_t i = j + 1; i < n; ++i) {
                double v = l(i, j);
                for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
                l(i, j) = v / root;
            }
        }
        if (!ok) {
            ridge = ridge == 0.0 ? base * 1e-12 : ridge * 100.0;
            continue;
        }
        // forward/back substitution
        std::vector<double> y(n), x(n);
        for (std::size_t i = 0; i < n; ++i) {
            double v = b[i];
            for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * y[k];
            y[i] = v / l(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double v = y[i];
            for (std::size_t k = i + 1; k < n; ++k) v -= l(k, i) * x[k];
            x[i] = v / l(i, i);
        }
        return x;
    }
    throw std::runtime_error("bss_eval: Gram matrix is numerically singular");
}

// least-squares projection of est onto the span of 0..filter_len-1 sample
// delays of each source; all vectors are over length n + filter_len - 1
std::vector<double> project_onto_delays(const std::vector<double>& est,
                                        const std::vector<const std::vector<double>*>& sources,
                                        int filter_len) {
    const std::size_t n_src = sources.size();
    const std::size_t flen = static_cast<std::size_t>(filter_len);
    const std::size_t dim = n_src * flen;
    const std::size_t padded = est.size() + flen - 1;

    // Gram matrix from source cross-correlations (Toeplitz blocks)
    Mat gram(dim, dim);
    for (std::size_t a = 0; a < n_src; ++a)
        for (std::size_t b = a; b < n_src; ++b) {
            const auto corr = cross_correlation(*sources[a], *sources[b], filter_len - 1);
            for (std::size_t i = 0; i < flen; ++i)
                for (std::size_t j = 0; j < flen; ++j) {
                    // sum_n s_a(n-i) s_b(n-j) = corr_ab at lag j-i
                    const int lag = static_cast<int>(j) - static_cast<int>(i);
                    const double v = corr[static_cast<std::size_t>(lag + filter_len - 1)];
                    gram(a * flen + i, b * flen + j) = v;
                    gram(b * flen + j, a * flen + i) = v;
                }
        }

    std::vector<double> rhs(dim);
    for (std::size_t a = 0; a < n_src; ++a) {
        const auto corr = cross_correlation(est, *sources[a], filter_len - 1);
        for (std::size_t i = 0; i < flen; ++i)
            rhs[a * flen + i] = corr[static_cast<std::size_t>(static_cast<int>(i) + filter_len - 1)];
    }

    const auto coeffs = solve_spd(std::move(gram), std::move(rhs));

    std::vector<double> proj(padded, 0.0);
    for (std::size_t a = 0; a < n_src; ++a) {
        const auto& s = *sources[a];
        for (std::size_t i = 0; i < flen; ++i) {
            const double c = coeffs[a * flen + i];
            if (c == 0.0) continue;
            for (std::size_t t = 0; t < s.size(); ++t) proj[t + i] += c * s[t];
        }
    }
    return proj;
}

BssScores decompose_one(const std::vector<double>& est, const std::vector<double>& own,
                        const std::vector<const std::vector<double>*>& all, int filter_len) {
    const std::size_t padded = est.size() + static_cast<std::size_t>(filter_len) - 1;
    const auto s_target = project_onto_delays(est, {&own}, filter_len);
    const auto p_all = project_onto_delays(est, all, filter_len);

    std::vector<double> e_interf(padded), e_artif(padded);
    for (std::size_t i = 0; i < padded; ++i) {
        e_interf[i] = p_all[i] - s_target[i];
        e_artif[i] = (i < est.size() ? est[i] : 0.0) - p_all[i];
    }
    const double target_e = energy(s_target);
    const double interf_e = energy(e_interf);
    const double artif_e = energy(e_artif);
    double target_plus_interf = 0.0;
    for (std::size_t i = 0; i < padded; ++i) {
        const double v = s_target[i] + e_interf[i];
        target_plus_interf += v * v;
    }
    double error_e = 0.0;
    for (std::size_t i = 0; i < padded; ++i) {
        const double v = e_interf[i] + e_artif[i];
        error_e += v * v;
    }

    BssScores scores;
    scores.sdr_db = ratio_db(target_e, error_e);
    scores.sir_db = ratio_db(target_e, interf_e);
    scores.sar_db = ratio_db(target_plus_interf, artif_e);
    return scores;
}

}  // namespace

MetricConfig wideband_metric_config() {
    MetricConfig cfg;
    cfg.stft.window_length = 256;
    cfg.stft.hop = 128;
    cfg.stft.fft_size = 512;
    cfg.stft.sample_rate = 16000;
    cfg.loss.band_config = make_band_config(16000, 512, 150.0, 8000.0);
    cfg.loss.segment_frames = default_segment_frames(16000, 128);  // 48 frames = 384 ms
    return cfg;
}

MetricConfig standard_metric_config() {
    MetricConfig cfg;
    cfg.stft.window_length = 256;
    cfg.stft.hop = 128;
    cfg.stft.fft_size = 512;
    cfg.stft.sample_rate = 10000;
    cfg.loss.band_config = make_band_config(10000, 512, 150.0, 5000.0);
    cfg.loss.segment_frames = default_segment_frames(10000, 128);  // 30 frames = 384 ms
    cfg.remove_silent_frames = true;
    return cfg;
}

double estoi_metric(const AudioClip& reference, const AudioClip& estimate,
                    const MetricConfig& config) {
    auto [ref_mags, est_mags] = metric_spectrograms(reference, estimate, config);
    // reference plays the target role, estimate the degraded role
    return estoi_d_final(est_mags, ref_mags, config.loss);
}

double stoi_metric(const AudioClip& reference, const AudioClip& estimate,
                   const MetricConfig& config) {
    auto [ref_mags, est_mags] = metric_spectrograms(reference, estimate, config);
    const auto& bands = config.loss.band_config.band_edges;
    const std::size_t num_bands = bands.size();
    const std::size_t frames = ref_mags.cols;
    const std::size_t n = static_cast<std::size_t>(config.loss.segment_frames);
    if (frames < n)
        throw std::invalid_argument("stoi_metric: input shorter than one analysis segment");
    const double eps = config.loss.epsilon;
    const double clip_gain = std::pow(10.0, 15.0 / 20.0);  // beta = -15 dB

    Mat ref_bands(num_bands, frames), est_bands(num_bands, frames);
    for (std::size_t j = 0; j < num_bands; ++j) {
        const auto [f1, f2] = bands[j];
        for (std::size_t t = 0; t < frames; ++t) {
            double rs = 0.0, es = 0.0;
            for (int f = f1; f <= f2; ++f) {
                rs += ref_mags(static_cast<std::size_t>(f), t) * ref_mags(static_cast<std::size_t>(f), t);
                es += est_mags(static_cast<std::size_t>(f), t) * est_mags(static_cast<std::size_t>(f), t);
            }
            ref_bands(j, t) = std::sqrt(rs);
            est_bands(j, t) = std::sqrt(es);
        }
    }

    double acc = 0.0;
    std::size_t count = 0;
    std::vector<double> x(n), y(n);
    for (std::size_t m = 0; m + n <= frames; ++m) {
        for (std::size_t j = 0; j < num_bands; ++j) {
            double xe = 0.0, ye = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                x[k] = ref_bands(j, m + k);
                y[k] = est_bands(j, m + k);
                xe += x[k] * x[k];
                ye += y[k] * y[k];
            }
            // scale the degraded band to the clean energy, then bound the
            // per-sample distortion
            const double gain = std::sqrt(xe) / std::max(std::sqrt(ye), eps);
            double xm = 0.0, ym = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                y[k] = std::min(y[k] * gain, (1.0 + clip_gain) * x[k]);
                xm += x[k];
                ym += y[k];
            }
            xm /= static_cast<double>(n);
            ym /= static_cast<double>(n);
            double xy = 0.0, xx = 0.0, yy = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double xc = x[k] - xm;
                const double yc = y[k] - ym;
                xy += xc * yc;
                xx += xc * xc;
                yy += yc * yc;
            }
            acc += xy / std::max(std::sqrt(xx) * std::sqrt(yy), eps);
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

std::pair<BssScores, BssScores> bss_eval(const AudioClip& ref1, const AudioClip& ref2,
                                         const AudioClip& est1, const AudioClip& est2,
                                         int filter_len) {
    if (filter_len < 1) throw std::invalid_argument("bss_eval: filter_len must be >= 1");
    const std::size_t n = ref1.samples.size();
    if (ref2.samples.size() != n || est1.samples.size() != n || est2.samples.size() != n)
        throw std::invalid_argument("bss_eval: all four signals must have equal length");
    if (n == 0) throw std::invalid_argument("bss_eval: empty signals");
    if (energy(ref1.samples) == 0.0 || energy(ref2.samples) == 0.0)
        throw std::invalid_argument("bss_eval: degenerate all-zero reference");

    const std::vector<const std::vector<double>*> all = {&ref1.samples, &ref2.samples};
    BssScores s1 = decompose_one(est1.samples, ref1.samples, all, filter_len);
    BssScores s2 = decompose_one(est2.samples, ref2.samples, all, filter_len);
    return {s1, s2};
}

const char* const kMetricCsvHeader = "mixture_id,source,estoi,stoi,sdr_db,sir_db,sar_db";

namespace {
std::string db_str(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace

void write_metric_csv(const std::vector<MetricReport>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_metric_csv: cannot open " + path);
    f << kMetricCsvHeader << "\n";
    for (const auto& r : rows) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.estoi, r.stoi);
        f << r.mixture_id << "," << r.source << "," << buf << "," << db_str(r.sdr_db) << ","
          << db_str(r.sir_db) << "," << db_str(r.sar_db) << "\n";
    }
}

void write_metric_jsonl(const std::vector<MetricReport>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_metric_jsonl: cannot open " + path);
    for (const auto& r : rows) {
        nlohmann::json j = {{"mixture_id", r.mixture_id}, {"source", r.source},
                            {"estoi", r.estoi},           {"stoi", r.stoi},
                            {"sdr_db", r.sdr_db},         {"sir_db", r.sir_db},
                            {"sar_db", r.sar_db}};
        f << j.dump() << "\n";  // note: nlohmann serializes +inf as null
    }
}

}  // namespace estoisep
