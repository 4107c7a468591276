#pragma once

#include <string>
#include <utility>
#include <vector>

#include "estoisep/dsp.hpp"
#include "estoisep/loss.hpp"
#include "estoisep/matrix.hpp"

namespace estoisep {

/// One recurrent layer: standard forget-gate LSTM, no peepholes.
/// Gate blocks are stacked in the order input, forget, cell, output.
struct LstmLayerParams {
    int input_dim = 0;
    int hidden_dim = 0;
    Mat w_in;   // 4h x input_dim
    Mat w_rec;  // 4h x hidden_dim
    Vec bias;   // 4h
};

struct DenseParams {
    Mat w;  // outputs x hidden_dim
    Vec bias;
};

/// Mask-predicting separation network: LSTM stack, time-distributed dense
/// sigmoid head, and the deterministic complementary-mask output layer.
struct SeparationModel {
    StftConfig stft_config;
    EstoiLossConfig loss_config;
    int sequence_length = 256;
    std::vector<LstmLayerParams> layers;
    DenseParams dense;

    int freq_bins() const { return stft_config.freq_bins(); }
    void validate() const;
};

/// Fresh model. Input weights are fan-in-scaled uniform, recurrent weights
/// orthogonal per gate, forget-gate bias 1, everything else 0.
SeparationModel make_model(const StftConfig& stft_config, const EstoiLossConfig& loss_config,
                           int num_layers, int hidden_dim, int sequence_length,
                           std::uint64_t seed);

/// Per-timestep activations cached by forward() for the backward pass.
struct LayerTape {
    Mat gate_in, gate_forget, gate_cell, gate_out;  // T x h, post-activation
    Mat cell, tanh_cell, hidden;                    // T x h
};

struct ForwardTape {
    std::vector<LayerTape> layers;
    Mat mixture;  // F x T
    Mat mask;     // F x T
};

struct ForwardResult {
    Mat mask;  // F x T, entries in (0, 1)
    MagnitudeSpectrogram est1;  // mask * Z
    MagnitudeSpectrogram est2;  // Z - est1, so est1 + est2 == Z
    ForwardTape tape;
};

ForwardResult forward(const SeparationModel& model, const MagnitudeSpectrogram& mixture_mags);

/// Same shapes as the model parameters; also used for Adam moments.
struct ModelGrads {
    std::vector<LstmLayerParams> layers;
    DenseParams dense;

    void accumulate(const ModelGrads& other);
    void scale(double s);
    double global_norm() const;
    bool all_finite() const;
};

ModelGrads zero_grads(const SeparationModel& model);

/// Exact gradients of the upstream loss for every parameter, given the
/// loss gradients with respect to the two estimated spectrograms.
ModelGrads backward(const SeparationModel& model, const ForwardTape& tape, const Mat& grad_est1,
                    const Mat& grad_est2);

/// Scales all gradients so their global L2 norm is at most max_norm.
void clip_global_norm(ModelGrads& grads, double max_norm);

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    ModelGrads m;
    ModelGrads v;
};

AdamState make_adam_state(const SeparationModel& model, double learning_rate = 1e-3);

/// Bias-corrected Adam update in place. Throws on non-finite gradients.
void adam_step(SeparationModel& model, const ModelGrads& grads, AdamState& state);

std::size_t parameter_count(const SeparationModel& model);

/// Named parameter tensors in checkpoint order; handy for gradient checks.
std::vector<std::pair<std::string, Vec*>> parameter_tensors(SeparationModel& model);
std::vector<std::pair<std::string, const Vec*>> gradient_tensors(const ModelGrads& grads);

/// Versioned binary checkpoint: magic bytes, format version, JSON config
/// block, then named little-endian float64 tensors (parameters and Adam
/// moments).
void save_model(const SeparationModel& model, const AdamState& state, const std::string& path);
std::pair<SeparationModel, AdamState> load_model(const std::string& path);

}  // namespace estoisep
