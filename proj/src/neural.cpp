#include "estoisep/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "estoisep/rng.hpp"

namespace estoisep {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// orthogonalize a square Gaussian matrix with two passes of modified Gram-Schmidt
Mat random_orthogonal(int n, Rng& rng) {
    Mat q(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    for (double& v : q.a) v = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < q.rows; ++i) {
            double* ri = &q.a[i * q.cols];
            for (std::size_t k = 0; k < i; ++k) {
                const double* rk = &q.a[k * q.cols];
                const double proj = dot(ri, rk, q.cols);
                for (std::size_t c = 0; c < q.cols; ++c) ri[c] -= proj * rk[c];
            }
            const double norm = std::sqrt(dot(ri, ri, q.cols));
            if (norm < 1e-12) throw std::runtime_error("random_orthogonal: degenerate draw");
            for (std::size_t c = 0; c < q.cols; ++c) ri[c] /= norm;
        }
    }
    return q;
}

template <typename Fn>
void for_each_tensor_pair(std::vector<LstmLayerParams>& la, DenseParams& da,
                          const std::vector<LstmLayerParams>& lb, const DenseParams& db, Fn fn) {
    for (std::size_t l = 0; l < la.size(); ++l) {
        fn(la[l].w_in.a, lb[l].w_in.a);
        fn(la[l].w_rec.a, lb[l].w_rec.a);
        fn(la[l].bias, lb[l].bias);
    }
    fn(da.w.a, db.w.a);
    fn(da.bias, db.bias);
}

template <typename Fn>
void for_each_tensor(const std::vector<LstmLayerParams>& layers, const DenseParams& dense, Fn fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        fn("lstm" + std::to_string(l) + ".w_in", layers[l].w_in.a);
        fn("lstm" + std::to_string(l) + ".w_rec", layers[l].w_rec.a);
        fn("lstm" + std::to_string(l) + ".bias", layers[l].bias);
    }
    fn("dense.w", dense.w.a);
    fn("dense.bias", dense.bias);
}

}  // namespace

void SeparationModel::validate() const {
    stft_config.validate();
    loss_config.validate();
    if (layers.empty()) throw std::invalid_argument("SeparationModel: no recurrent layers");
    int expect = freq_bins();
    for (const auto& l : layers) {
        if (l.input_dim != expect)
            throw std::invalid_argument("SeparationModel: layer input dim chain broken");
        if (l.w_in.rows != static_cast<std::size_t>(4 * l.hidden_dim) ||
            l.w_in.cols != static_cast<std::size_t>(l.input_dim) ||
            l.w_rec.rows != static_cast<std::size_t>(4 * l.hidden_dim) ||
            l.w_rec.cols != static_cast<std::size_t>(l.hidden_dim) ||
            l.bias.size() != static_cast<std::size_t>(4 * l.hidden_dim))
            throw std::invalid_argument("SeparationModel: layer tensor shape mismatch");
        expect = l.hidden_dim;
    }
    if (dense.w.rows != static_cast<std::size_t>(freq_bins()) ||
        dense.w.cols != static_cast<std::size_t>(expect) ||
        dense.bias.size() != static_cast<std::size_t>(freq_bins()))
        throw std::invalid_argument("SeparationModel: dense head shape mismatch");
    if (sequence_length < 1) throw std::invalid_argument("SeparationModel: bad sequence_length");
}

SeparationModel make_model(const StftConfig& stft_config, const EstoiLossConfig& loss_config,
                           int num_layers, int hidden_dim, int sequence_length,
                           std::uint64_t seed) {
    if (num_layers < 1 || hidden_dim < 1)
        throw std::invalid_argument("make_model: need at least one layer and one unit");
    SeparationModel model;
    model.stft_config = stft_config;
    model.loss_config = loss_config;
    model.sequence_length = sequence_length;

    Rng rng(seed);
    int input_dim = model.freq_bins();
    for (int l = 0; l < num_layers; ++l) {
        LstmLayerParams layer;
        layer.input_dim = input_dim;
        layer.hidden_dim = hidden_dim;
        const std::size_t h = static_cast<std::size_t>(hidden_dim);
        layer.w_in = Mat(4 * h, static_cast<std::size_t>(input_dim));
        const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
        for (double& v : layer.w_in.a) v = rng.uniform(-scale, scale);
        layer.w_rec = Mat(4 * h, h);
        for (int gate = 0; gate < 4; ++gate) {
            const Mat q = random_orthogonal(hidden_dim, rng);
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < h; ++c)
                    layer.w_rec(static_cast<std::size_t>(gate) * h + r, c) = q(r, c);
        }
        layer.bias.assign(4 * h, 0.0);
        for (std::size_t i = h; i < 2 * h; ++i) layer.bias[i] = 1.0;  // forget gate open
        model.layers.push_back(std::move(layer));
        input_dim = hidden_dim;
    }

    const std::size_t fbins = static_cast<std::size_t>(model.freq_bins());
    model.dense.w = Mat(fbins, static_cast<std::size_t>(hidden_dim));
    const double dscale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    for (double& v : model.dense.w.a) v = rng.uniform(-dscale, dscale);
    model.dense.bias.assign(fbins, 0.0);

    model.validate();
    return model;
}

ForwardResult forward(const SeparationModel& model, const MagnitudeSpectrogram& mixture_mags) {
    const std::size_t fbins = static_cast<std::size_t>(model.freq_bins());
    if (mixture_mags.mags.rows != fbins)
        throw std::invalid_argument("forward: model expects " + std::to_string(fbins) +
                                    " frequency bins, got " +
                                    std::to_string(mixture_mags.mags.rows));
    const std::size_t frames = mixture_mags.mags.cols;
    if (frames == 0) throw std::invalid_argument("forward: empty spectrogram");

    ForwardResult res;
    res.tape.mixture = mixture_mags.mags;
    res.tape.layers.resize(model.layers.size());

    Vec input_buf(fbins);
    Vec preact;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        const std::size_t h = static_cast<std::size_t>(layer.hidden_dim);
        auto& tape = res.tape.layers[l];
        tape.gate_in = Mat(frames, h);
        tape.gate_forget = Mat(frames, h);
        tape.gate_cell = Mat(frames, h);
        tape.gate_out = Mat(frames, h);
        tape.cell = Mat(frames, h);
        tape.tanh_cell = Mat(frames, h);
        tape.hidden = Mat(frames, h);

        preact.assign(4 * h, 0.0);
        Vec c_prev(h, 0.0), h_prev(h, 0.0);
        for (std::size_t t = 0; t < frames; ++t) {
            const double* x;
            if (l == 0) {
                for (std::size_t f = 0; f < fbins; ++f) input_buf[f] = mixture_mags.mags(f, t);
                x = input_buf.data();
            } else {
                x = &res.tape.layers[l - 1].hidden.a[t * res.tape.layers[l - 1].hidden.cols];
            }
            matvec(layer.w_in, x, preact.data());
            for (std::size_t r = 0; r < 4 * h; ++r) {
                const double* row = &layer.w_rec.a[r * h];
                double acc = layer.bias[r];
                for (std::size_t c = 0; c < h; ++c) acc += row[c] * h_prev[c];
                preact[r] += acc;
            }
            double* gi = &tape.gate_in.a[t * h];
            double* gf = &tape.gate_forget.a[t * h];
            double* gg = &tape.gate_cell.a[t * h];
            double* go = &tape.gate_out.a[t * h];
            double* ct = &tape.cell.a[t * h];
            double* tc = &tape.tanh_cell.a[t * h];
            double* ht = &tape.hidden.a[t * h];
            for (std::size_t i = 0; i < h; ++i) {
                gi[i] = sigmoid(preact[i]);
                gf[i] = sigmoid(preact[h + i]);
                gg[i] = std::tanh(preact[2 * h + i]);
                go[i] = sigmoid(preact[3 * h + i]);
                ct[i] = gf[i] * c_prev[i] + gi[i] * gg[i];
                tc[i] = std::tanh(ct[i]);
                ht[i] = go[i] * tc[i];
            }
            std::memcpy(c_prev.data(), ct, h * sizeof(double));
            std::memcpy(h_prev.data(), ht, h * sizeof(double));
        }
    }

    // time-distributed dense head + deterministic masking layer
    const auto& top = res.tape.layers.back().hidden;
    res.mask = Mat(fbins, frames);
    res.est1.config = mixture_mags.config;
    res.est2.config = mixture_mags.config;
    res.est1.mags = Mat(fbins, frames);
    res.est2.mags = Mat(fbins, frames);
    Vec z(fbins);
    for (std::size_t t = 0; t < frames; ++t) {
        matvec(model.dense.w, &top.a[t * top.cols], z.data());
        for (std::size_t f = 0; f < fbins; ++f) {
            const double m = sigmoid(z[f] + model.dense.bias[f]);
            const double mix = mixture_mags.mags(f, t);
            double e1 = m * mix;
            double e2 = mix - e1;
            // enforce est1 + est2 == mixture exactly: when the first sum
            // misses, e2 >= mix/2 holds, so mix - e2 is Sterbenz-exact and
            // the rebuilt e1 (still within one ulp of m*mix) restores the
            // identity bitwise
            if (e1 + e2 != mix) e1 = mix - e2;
            res.mask(f, t) = m;
            res.est1.mags(f, t) = e1;
            res.est2.mags(f, t) = e2;
        }
    }
    res.tape.mask = res.mask;
    return res;
}

ModelGrads zero_grads(const SeparationModel& model) {
    ModelGrads g;
    for (const auto& layer : model.layers) {
        LstmLayerParams lg;
        lg.input_dim = layer.input_dim;
        lg.hidden_dim = layer.hidden_dim;
        lg.w_in = Mat(layer.w_in.rows, layer.w_in.cols);
        lg.w_rec = Mat(layer.w_rec.rows, layer.w_rec.cols);
        lg.bias.assign(layer.bias.size(), 0.0);
        g.layers.push_back(std::move(lg));
    }
    g.dense.w = Mat(model.dense.w.rows, model.dense.w.cols);
    g.dense.bias.assign(model.dense.bias.size(), 0.0);
    return g;
}

void ModelGrads::accumulate(const ModelGrads& other) {
    for_each_tensor_pair(layers, dense, other.layers, other.dense,
                         [](Vec& a, const Vec& b) {
                             for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
                         });
}

void ModelGrads::scale(double s) {
    for_each_tensor_pair(layers, dense, layers, dense, [s](Vec& a, const Vec&) {
        for (double& v : a) v *= s;
    });
}

double ModelGrads::global_norm() const {
    double acc = 0.0;
    for_each_tensor(layers, dense, [&acc](const std::string&, const Vec& v) {
        for (double x : v) acc += x * x;
    });
    return std::sqrt(acc);
}

bool ModelGrads::all_finite() const {
    bool ok = true;
    for_each_tensor(layers, dense, [&ok](const std::string&, const Vec& v) {
        for (double x : v)
            if (!std::isfinite(x)) ok = false;
    });
    return ok;
}

ModelGrads backward(const SeparationModel& model, const ForwardTape& tape, const Mat& grad_est1,
                    const Mat& grad_est2) {
    const std::size_t fbins = static_cast<std::size_t>(model.freq_bins());
    const std::size_t frames = tape.mixture.cols;
    if (tape.layers.size() != model.layers.size() || tape.mixture.rows != fbins)
        throw std::invalid_argument("backward: tape does not match model");
    if (grad_est1.rows != fbins || grad_est1.cols != frames || !grad_est1.same_shape(grad_est2))
        throw std::invalid_argument("backward: upstream gradient shape mismatch");

    ModelGrads grads = zero_grads(model);

    // est1 = m*Z, est2 = Z - est1  =>  dL/dm = (g1 - g2) * Z, then sigmoid
    const std::size_t top_h = static_cast<std::size_t>(model.layers.back().hidden_dim);
    Mat dhidden(frames, top_h);  // dL/dh for the top layer, all timesteps
    Vec dz(fbins);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t f = 0; f < fbins; ++f) {
            const double m = tape.mask(f, t);
            const double dm = (grad_est1(f, t) - grad_est2(f, t)) * tape.mixture(f, t);
            dz[f] = dm * m * (1.0 - m);
            grads.dense.bias[f] += dz[f];
        }
        const double* htop = &tape.layers.back().hidden.a[t * top_h];
        outer_add(grads.dense.w, dz.data(), htop);
        double* dh = &dhidden.a[t * top_h];
        for (std::size_t c = 0; c < top_h; ++c) dh[c] = 0.0;
        matvec_transpose_add(model.dense.w, dz.data(), dh);
    }

    Vec input_buf(fbins);
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const auto& layer = model.layers[l];
        const auto& lt = tape.layers[l];
        const std::size_t h = static_cast<std::size_t>(layer.hidden_dim);
        const std::size_t in_dim = static_cast<std::size_t>(layer.input_dim);
        auto& lg = grads.layers[l];

        Mat dinput;  // dL/dx for this layer == dL/dh of the layer below
        if (l > 0) dinput = Mat(frames, in_dim);

        Vec dh_rec(h, 0.0), dc_rec(h, 0.0), da(4 * h);
        for (std::size_t t = frames; t-- > 0;) {
            const double* gi = &lt.gate_in.a[t * h];
            const double* gf = &lt.gate_forget.a[t * h];
            const double* gg = &lt.gate_cell.a[t * h];
            const double* go = &lt.gate_out.a[t * h];
            const double* tc = &lt.tanh_cell.a[t * h];
            const double* c_prev = t > 0 ? &lt.cell.a[(t - 1) * h] : nullptr;
            const double* dh_above = &dhidden.a[t * h];

            for (std::size_t i = 0; i < h; ++i) {
                const double dh = dh_above[i] + dh_rec[i];
                const double dc = dc_rec[i] + dh * go[i] * (1.0 - tc[i] * tc[i]);
                const double d_out = dh * tc[i];
                const double d_in = dc * gg[i];
                const double d_forget = c_prev ? dc * c_prev[i] : 0.0;
                const double d_cell = dc * gi[i];
                da[i] = d_in * gi[i] * (1.0 - gi[i]);
                da[h + i] = d_forget * gf[i] * (1.0 - gf[i]);
                da[2 * h + i] = d_cell * (1.0 - gg[i] * gg[i]);
                da[3 * h + i] = d_out * go[i] * (1.0 - go[i]);
                dc_rec[i] = dc * gf[i];
            }

            const double* x;
            if (l == 0) {
                for (std::size_t f = 0; f < fbins; ++f) input_buf[f] = tape.mixture(f, t);
                x = input_buf.data();
            } else {
                x = &tape.layers[l - 1].hidden.a[t * in_dim];
            }
            outer_add(lg.w_in, da.data(), x);
            if (t > 0) outer_add(lg.w_rec, da.data(), &lt.hidden.a[(t - 1) * h]);
            for (std::size_t i = 0; i < 4 * h; ++i) lg.bias[i] += da[i];

            if (l > 0) {
                double* dx = &dinput.a[t * in_dim];
                matvec_transpose_add(layer.w_in, da.data(), dx);
            }
            std::fill(dh_rec.begin(), dh_rec.end(), 0.0);
            matvec_transpose_add(layer.w_rec, da.data(), dh_rec.data());
        }
        if (l > 0) dhidden = std::move(dinput);
    }
    return grads;
}

void clip_global_norm(ModelGrads& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = grads.global_norm();
    if (norm > max_norm) grads.scale(max_norm / norm);
}

AdamState make_adam_state(const SeparationModel& model, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    s.m = zero_grads(model);
    s.v = zero_grads(model);
    return s;
}

void adam_step(SeparationModel& model, const ModelGrads& grads, AdamState& state) {
    if (!grads.all_finite())
        throw std::runtime_error("adam_step: non-finite gradient (training diverged)");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    auto update = [&](Vec& param, Vec& m, Vec& v, const Vec& g) {
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            param[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        }
    };
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        update(model.layers[l].w_in.a, state.m.layers[l].w_in.a, state.v.layers[l].w_in.a,
               grads.layers[l].w_in.a);
        update(model.layers[l].w_rec.a, state.m.layers[l].w_rec.a, state.v.layers[l].w_rec.a,
               grads.layers[l].w_rec.a);
        update(model.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias,
               grads.layers[l].bias);
    }
    update(model.dense.w.a, state.m.dense.w.a, state.v.dense.w.a, grads.dense.w.a);
    update(model.dense.bias, state.m.dense.bias, state.v.dense.bias, grads.dense.bias);
}

std::size_t parameter_count(const SeparationModel& model) {
    std::size_t n = 0;
    for_each_tensor(model.layers, model.dense,
                    [&n](const std::string&, const Vec& v) { n += v.size(); });
    return n;
}

std::vector<std::pair<std::string, Vec*>> parameter_tensors(SeparationModel& model) {
    std::vector<std::pair<std::string, Vec*>> out;
    for_each_tensor(model.layers, model.dense, [&out](const std::string& name, const Vec& v) {
        out.emplace_back(name, const_cast<Vec*>(&v));
    });
    return out;
}

std::vector<std::pair<std::string, const Vec*>> gradient_tensors(const ModelGrads& grads) {
    std::vector<std::pair<std::string, const Vec*>> out;
    for_each_tensor(grads.layers, grads.dense, [&out](const std::string& name, const Vec& v) {
        out.emplace_back(name, &v);
    });
    return out;
}

namespace {

constexpr char kMagic[8] = {'E', 'S', 'E', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}
void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

nlohmann::json config_to_json(const SeparationModel& model, const AdamState& state) {
    nlohmann::json j;
    const auto& st = model.stft_config;
    j["stft"] = {{"window_length", st.window_length},
                 {"hop", st.hop},
                 {"fft_size", st.fft_size},
                 {"sample_rate", st.sample_rate}};
    const auto& bc = model.loss_config.band_config;
    nlohmann::json edges = nlohmann::json::array();
    for (auto [a, b] : bc.band_edges) edges.push_back({a, b});
    j["bands"] = {{"lowest_center", bc.lowest_center},
                  {"max_freq", bc.max_freq},
                  {"sample_rate", bc.sample_rate},
                  {"fft_size", bc.fft_size},
                  {"edges", edges}};
    j["loss"] = {{"segment_frames", model.loss_config.segment_frames},
                 {"epsilon", model.loss_config.epsilon}};
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& l : model.layers) dims.push_back(l.hidden_dim);
    j["model"] = {{"hidden_dims", dims}, {"sequence_length", model.sequence_length}};
    j["adam"] = {{"learning_rate", state.learning_rate},
                 {"beta1", state.beta1},
                 {"beta2", state.beta2},
                 {"eps", state.eps},
                 {"step", state.step}};
    return j;
}

}  // namespace

void save_model(const SeparationModel& model, const AdamState& state, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_model: cannot open " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    const std::string cfg = config_to_json(model, state).dump();
    write_u32(f, static_cast<std::uint32_t>(cfg.size()));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    std::vector<std::pair<std::string, const Vec*>> tensors;
    for_each_tensor(model.layers, model.dense, [&](const std::string& name, const Vec& v) {
        tensors.emplace_back(name, &v);
    });
    for_each_tensor(state.m.layers, state.m.dense, [&](const std::string& name, const Vec& v) {
        tensors.emplace_back("adam.m." + name, &v);
    });
    for_each_tensor(state.v.layers, state.v.dense, [&](const std::string& name, const Vec& v) {
        tensors.emplace_back("adam.v." + name, &v);
    });

    write_u32(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, data] : tensors) {
        write_u32(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(f, data->size());
        f.write(reinterpret_cast<const char*>(data->data()),
                static_cast<std::streamsize>(data->size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("save_model: write failed: " + path);
}

std::pair<SeparationModel, AdamState> load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_model: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_model: bad magic bytes in " + path);
    const std::uint32_t version = read_u32(f);
    if (version != kVersion)
        throw std::runtime_error("load_model: unsupported format version " +
                                 std::to_string(version));
    const std::uint32_t cfg_len = read_u32(f);
    std::string cfg_str(cfg_len, '\0');
    f.read(cfg_str.data(), cfg_len);
    if (!f) throw std::runtime_error("load_model: truncated config block in " + path);

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(cfg_str);
    } catch (const std::exception& e) {
        throw std::runtime_error("load_model: corrupt config block: " + std::string(e.what()));
    }

    StftConfig stft_cfg;
    stft_cfg.window_length = j["stft"]["window_length"];
    stft_cfg.hop = j["stft"]["hop"];
    stft_cfg.fft_size = j["stft"]["fft_size"];
    stft_cfg.sample_rate = j["stft"]["sample_rate"];

    EstoiLossConfig loss_cfg;
    loss_cfg.band_config.lowest_center = j["bands"]["lowest_center"];
    loss_cfg.band_config.max_freq = j["bands"]["max_freq"];
    loss_cfg.band_config.sample_rate = j["bands"]["sample_rate"];
    loss_cfg.band_config.fft_size = j["bands"]["fft_size"];
    for (const auto& e : j["bands"]["edges"])
        loss_cfg.band_config.band_edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    loss_cfg.segment_frames = j["loss"]["segment_frames"];
    loss_cfg.epsilon = j["loss"]["epsilon"];

    std::vector<int> hidden_dims = j["model"]["hidden_dims"].get<std::vector<int>>();
    SeparationModel model = make_model(stft_cfg, loss_cfg, static_cast<int>(hidden_dims.size()),
                                       hidden_dims.empty() ? 1 : hidden_dims[0],
                                       j["model"]["sequence_length"], 0);
    // make_model assumes uniform width; rebuild the chain if dims differ
    for (std::size_t l = 0; l < hidden_dims.size(); ++l) {
        if (model.layers[l].hidden_dim != hidden_dims[l])
            throw std::runtime_error("load_model: non-uniform hidden dims unsupported");
    }

    AdamState state = make_adam_state(model, j["adam"]["learning_rate"]);
    state.beta1 = j["adam"]["beta1"];
    state.beta2 = j["adam"]["beta2"];
    state.eps = j["adam"]["eps"];
    state.step = j["adam"]["step"];

    const std::uint32_t tensor_count = read_u32(f);
    std::vector<std::pair<std::string, Vec*>> slots;
    for_each_tensor(model.layers, model.dense, [&](const std::string& name, const Vec& v) {
        slots.emplace_back(name, const_cast<Vec*>(&v));
    });
    for_each_tensor(state.m.layers, state.m.dense, [&](const std::string& name, const Vec& v) {
        slots.emplace_back("adam.m." + name, const_cast<Vec*>(&v));
    });
    for_each_tensor(state.v.layers, state.v.dense, [&](const std::string& name, const Vec& v) {
        slots.emplace_back("adam.v." + name, const_cast<Vec*>(&v));
    });

    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const std::uint32_t name_len = read_u32(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const std::uint64_t count = read_u64(f);
        Vec* dst = nullptr;
        for (auto& [slot_name, vec] : slots)
            if (slot_name == name) dst = vec;
        if (dst == nullptr)
            throw std::runtime_error("load_model: unknown tensor '" + name + "' in " + path);
        if (dst->size() != count)
            throw std::runtime_error("load_model: tensor '" + name + "' has wrong size in " + path);
        f.read(reinterpret_cast<char*>(dst->data()),
               static_cast<std::streamsize>(count * sizeof(double)));
        if (!f) throw std::runtime_error("load_model: truncated tensor data in " + path);
    }
    model.validate();
    return {std::move(model), std::move(state)};
}

}  // namespace estoisep
