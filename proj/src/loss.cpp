#include "estoisep/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace estoisep {

namespace {

struct NormStats {
    Vec mean;
    Vec divisor;       // max(centered norm, epsilon)
    std::vector<bool> guarded;  // true where the epsilon clamp was active
};

// center rows and scale each to unit norm; stats retained for the backward pass
Mat normalize_rows(const Mat& in, double eps, NormStats* stats) {
    Mat out(in.rows, in.cols);
    if (stats) {
        stats->mean.resize(in.rows);
        stats->divisor.resize(in.rows);
        stats->guarded.assign(in.rows, false);
    }
    for (std::size_t r = 0; r < in.rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < in.cols; ++c) mean += in(r, c);
        mean /= static_cast<double>(in.cols);
        double sq = 0.0;
        for (std::size_t c = 0; c < in.cols; ++c) {
            const double v = in(r, c) - mean;
            out(r, c) = v;
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        const bool guard = !(norm > eps);
        const double div = guard ? eps : norm;
        for (std::size_t c = 0; c < in.cols; ++c) out(r, c) /= div;
        if (stats) {
            stats->mean[r] = mean;
            stats->divisor[r] = div;
            stats->guarded[r] = guard;
        }
    }
    return out;
}

Mat normalize_cols(const Mat& in, double eps, NormStats* stats) {
    Mat out(in.rows, in.cols);
    if (stats) {
        stats->mean.resize(in.cols);
        stats->divisor.resize(in.cols);
        stats->guarded.assign(in.cols, false);
    }
    for (std::size_t c = 0; c < in.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < in.rows; ++r) mean += in(r, c);
        mean /= static_cast<double>(in.rows);
        double sq = 0.0;
        for (std::size_t r = 0; r < in.rows; ++r) {
            const double v = in(r, c) - mean;
            out(r, c) = v;
            sq += v * v;
        }
        const double norm = std::sqrt(sq);
        const bool guard = !(norm > eps);
        const double div = guard ? eps : norm;
        for (std::size_t r = 0; r < in.rows; ++r) out(r, c) /= div;
        if (stats) {
            stats->mean[c] = mean;
            stats->divisor[c] = div;
            stats->guarded[c] = guard;
        }
    }
    return out;
}

// reverse of v = centered(u) / max(||centered(u)||, eps) for one vector,
// given the normalized output v and upstream gradient g:
//   unguarded: g_c = (g - v <v,g>) / divisor, then recenter
//   guarded:   g_c = g / eps, then recenter
void backprop_unit_vector(const double* v, const double* g, double divisor, bool guarded,
                          std::size_t n, double* out) {
    double vg = 0.0;
    if (!guarded)
        for (std::size_t i = 0; i < n; ++i) vg += v[i] * g[i];
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double gc = guarded ? g[i] / divisor : (g[i] - v[i] * vg) / divisor;
        out[i] = gc;
        mean += gc;
    }
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] -= mean;
}

}  // namespace

void EstoiLossConfig::validate() const {
    if (segment_frames < 2)
        throw std::invalid_argument("EstoiLossConfig: segment_frames must be >= 2");
    if (!(epsilon > 0.0)) throw std::invalid_argument("EstoiLossConfig: epsilon must be positive");
    if (band_config.band_edges.empty())
        throw std::invalid_argument("EstoiLossConfig: band config has no bands");
}

int default_segment_frames(int sample_rate, int hop) {
    return static_cast<int>(std::lround(0.384 * sample_rate / hop));
}

SegmentStack segment(const OctaveBandMatrix& bands, int segment_frames) {
    const std::size_t n = static_cast<std::size_t>(segment_frames);
    const std::size_t t = bands.values.cols;
    if (segment_frames < 1 || t < n)
        throw std::invalid_argument("segment: sequence has " + std::to_string(t) +
                                    " frames but the context needs " +
                                    std::to_string(segment_frames) +
                                    "; lengthen the sequence");
    SegmentStack stack;
    stack.num_bands = bands.values.rows;
    stack.segment_frames = n;
    stack.segments.reserve(t - n + 1);
    for (std::size_t m = 0; m + n <= t; ++m) {
        Mat seg(stack.num_bands, n);
        for (std::size_t j = 0; j < stack.num_bands; ++j)
            for (std::size_t k = 0; k < n; ++k) seg(j, k) = bands.values(j, m + k);
        stack.segments.push_back(std::move(seg));
    }
    return stack;
}

Mat normalize_segment(const Mat& seg, double epsilon) {
    return normalize_cols(normalize_rows(seg, epsilon, nullptr), epsilon, nullptr);
}

double intermediate_d(const Mat& seg_x, const Mat& seg_y) {
    if (!seg_x.same_shape(seg_y))
        throw std::invalid_argument("intermediate_d: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < seg_x.a.size(); ++i) acc += seg_x.a[i] * seg_y.a[i];
    return acc / static_cast<double>(seg_x.cols);
}

Mat normalize_segment_vjp(const Mat& seg, const Mat& upstream, double epsilon) {
    if (!seg.same_shape(upstream))
        throw std::invalid_argument("normalize_segment_vjp: shape mismatch");
    NormStats row_stats, col_stats;
    const Mat rows = normalize_rows(seg, epsilon, &row_stats);
    const Mat cols = normalize_cols(rows, epsilon, &col_stats);

    Mat g_rows(seg.rows, seg.cols), out(seg.rows, seg.cols);
    std::vector<double> v(seg.rows), g(seg.rows), o(seg.rows);
    for (std::size_t c = 0; c < seg.cols; ++c) {
        for (std::size_t r = 0; r < seg.rows; ++r) {
            v[r] = cols(r, c);
            g[r] = upstream(r, c);
        }
        backprop_unit_vector(v.data(), g.data(), col_stats.divisor[c], col_stats.guarded[c],
                             seg.rows, o.data());
        for (std::size_t r = 0; r < seg.rows; ++r) g_rows(r, c) = o[r];
    }
    std::vector<double> vr(seg.cols), gr(seg.cols), orow(seg.cols);
    for (std::size_t r = 0; r < seg.rows; ++r) {
        for (std::size_t c = 0; c < seg.cols; ++c) {
            vr[c] = rows(r, c);
            gr[c] = g_rows(r, c);
        }
        backprop_unit_vector(vr.data(), gr.data(), row_stats.divisor[r], row_stats.guarded[r],
                             seg.cols, orow.data());
        for (std::size_t c = 0; c < seg.cols; ++c) out(r, c) = orow[c];
    }
    return out;
}

Mat band_decompose_vjp(const Mat& mags, const OctaveBandConfig& config, const Mat& upstream) {
    if (upstream.rows != config.num_bands() || upstream.cols != mags.cols)
        throw std::invalid_argument("band_decompose_vjp: upstream shape mismatch");
    Mat out(mags.rows, mags.cols);
    for (std::size_t j = 0; j < config.num_bands(); ++j) {
        const auto [f1, f2] = config.band_edges[j];
        for (std::size_t t = 0; t < mags.cols; ++t) {
            double sq = 0.0;
            for (int f = f1; f <= f2; ++f)
                sq += mags(static_cast<std::size_t>(f), t) * mags(static_cast<std::size_t>(f), t);
            const double bv = std::sqrt(sq);
            if (bv <= 0.0) continue;
            const double gb = upstream(j, t) / bv;
            for (int f = f1; f <= f2; ++f)
                out(static_cast<std::size_t>(f), t) += gb * mags(static_cast<std::size_t>(f), t);
        }
    }
    return out;
}

double estoi_d_final(const Mat& est_mags, const Mat& tgt_mags, const EstoiLossConfig& config,
                     Mat* grad) {
    config.validate();
    if (!est_mags.same_shape(tgt_mags))
        throw std::invalid_argument("estoi_d_final: estimate/target shape mismatch");
    const auto& bands = config.band_config.band_edges;
    const std::size_t num_bands = bands.size();
    const std::size_t frames = est_mags.cols;
    const std::size_t n = static_cast<std::size_t>(config.segment_frames);
    if (frames < n)
        throw std::invalid_argument("estoi_d_final: " + std::to_string(frames) +
                                    " frames < segment context " + std::to_string(n) +
                                    "; lengthen the sequence");
    const std::size_t num_segs = frames - n + 1;
    const double eps = config.epsilon;

    // band decomposition of both spectrograms
    Mat est_bands(num_bands, frames), tgt_bands(num_bands, frames);
    for (std::size_t j = 0; j < num_bands; ++j) {
        const auto [f1, f2] = bands[j];
        for (std::size_t t = 0; t < frames; ++t) {
            double es = 0.0, ts = 0.0;
            for (int f = f1; f <= f2; ++f) {
                const double ev = est_mags(static_cast<std::size_t>(f), t);
                const double tv = tgt_mags(static_cast<std::size_t>(f), t);
                es += ev * ev;
                ts += tv * tv;
            }
            est_bands(j, t) = std::sqrt(es);
            tgt_bands(j, t) = std::sqrt(ts);
        }
    }

    Mat grad_bands;
    if (grad) grad_bands = Mat(num_bands, frames);

    Mat seg_est(num_bands, n), seg_tgt(num_bands, n);
    Mat g_col(num_bands, n), g_row(num_bands, n), g_seg(num_bands, n);
    double d_sum = 0.0;
    for (std::size_t m = 0; m < num_segs; ++m) {
        for (std::size_t j = 0; j < num_bands; ++j)
            for (std::size_t k = 0; k < n; ++k) {
                seg_est(j, k) = est_bands(j, m + k);
                seg_tgt(j, k) = tgt_bands(j, m + k);
            }
        const Mat tgt_norm = normalize_cols(normalize_rows(seg_tgt, eps, nullptr), eps, nullptr);
        NormStats row_stats, col_stats;
        const Mat est_rows = normalize_rows(seg_est, eps, grad ? &row_stats : nullptr);
        const Mat est_norm = normalize_cols(est_rows, eps, grad ? &col_stats : nullptr);
        d_sum += intermediate_d(est_norm, tgt_norm);
        if (!grad) continue;

        // d(d_final)/d(est_norm) for this segment: tgt_norm / (N * M)
        const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(num_segs));
        // column normalization backward (units are columns of est_rows)
        std::vector<double> v(num_bands), g(num_bands), o(num_bands);
        for (std::size_t c = 0; c < n; ++c) {
            for (std::size_t r = 0; r < num_bands; ++r) {
                v[r] = est_norm(r, c);
                g[r] = tgt_norm(r, c) * scale;
            }
            backprop_unit_vector(v.data(), g.data(), col_stats.divisor[c], col_stats.guarded[c],
                                 num_bands, o.data());
            for (std::size_t r = 0; r < num_bands; ++r) g_col(r, c) = o[r];
        }
        // row normalization backward (units are rows of the raw segment)
        std::vector<double> vr(n), gr(n), orow(n);
        for (std::size_t r = 0; r < num_bands; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                vr[c] = est_rows(r, c);
                gr[c] = g_col(r, c);
            }
            backprop_unit_vector(vr.data(), gr.data(), row_stats.divisor[r], row_stats.guarded[r],
                                 n, orow.data());
            for (std::size_t c = 0; c < n; ++c) g_seg(r, c) = orow[c];
        }
        // scatter back into the overlapping band columns
        for (std::size_t j = 0; j < num_bands; ++j)
            for (std::size_t k = 0; k < n; ++k) grad_bands(j, m + k) += g_seg(j, k);
    }

    if (grad) {
        // band decomposition backward: d sqrt(sum v^2) / dv = v / band_value
        *grad = Mat(est_mags.rows, est_mags.cols);
        for (std::size_t j = 0; j < num_bands; ++j) {
            const auto [f1, f2] = bands[j];
            for (std::size_t t = 0; t < frames; ++t) {
                const double bv = est_bands(j, t);
                if (bv <= 0.0) continue;  // all member bins are zero; subgradient 0
                const double gb = grad_bands(j, t) / bv;
                for (int f = f1; f <= f2; ++f)
                    (*grad)(static_cast<std::size_t>(f), t) += gb * est_mags(static_cast<std::size_t>(f), t);
            }
        }
    }
    return d_sum / static_cast<double>(num_segs);
}

namespace {

void check_quad(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2) {
    if (!est1.mags.same_shape(est2.mags) || !est1.mags.same_shape(tgt1.mags) ||
        !est1.mags.same_shape(tgt2.mags))
        throw std::invalid_argument("loss: all four spectrograms must share one shape");
}

}  // namespace

LossOutput estoi_loss(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                      const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2,
                      const EstoiLossConfig& config) {
    check_quad(est1, est2, tgt1, tgt2);
    LossOutput out;
    Mat g1, g2;
    const double d1 = estoi_d_final(est1.mags, tgt1.mags, config, &g1);
    const double d2 = estoi_d_final(est2.mags, tgt2.mags, config, &g2);
    out.value = -(d1 + d2) / 2.0;
    out.grad_source1 = std::move(g1);
    out.grad_source2 = std::move(g2);
    for (double& v : out.grad_source1.a) v *= -0.5;
    for (double& v : out.grad_source2.a) v *= -0.5;
    return out;
}

LossOutput mse_loss(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                    const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2) {
    check_quad(est1, est2, tgt1, tgt2);
    const std::size_t count = est1.mags.size();
    LossOutput out;
    out.grad_source1 = Mat(est1.mags.rows, est1.mags.cols);
    out.grad_source2 = Mat(est2.mags.rows, est2.mags.cols);
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double e1 = est1.mags.a[i] - tgt1.mags.a[i];
        const double e2 = est2.mags.a[i] - tgt2.mags.a[i];
        acc += e1 * e1 + e2 * e2;
        out.grad_source1.a[i] = e1 / static_cast<double>(count);
        out.grad_source2.a[i] = e2 / static_cast<double>(count);
    }
    out.value = acc / (2.0 * static_cast<double>(count));
    return out;
}

LossOutput combined_loss(const MagnitudeSpectrogram& est1, const MagnitudeSpectrogram& est2,
                         const MagnitudeSpectrogram& tgt1, const MagnitudeSpectrogram& tgt2,
                         double alpha, const EstoiLossConfig& config) {
    if (alpha < 0.0) throw std::invalid_argument("combined_loss: alpha must be >= 0");
    LossOutput out = mse_loss(est1, est2, tgt1, tgt2);
    if (alpha == 0.0) return out;
    const LossOutput corr = estoi_loss(est1, est2, tgt1, tgt2, config);
    out.value += alpha * corr.value;
    for (std::size_t i = 0; i < out.grad_source1.a.size(); ++i) {
        out.grad_source1.a[i] += alpha * corr.grad_source1.a[i];
        out.grad_source2.a[i] += alpha * corr.grad_source2.a[i];
    }
    return out;
}

}  // namespace estoisep
