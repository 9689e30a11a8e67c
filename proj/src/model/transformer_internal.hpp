#pragma once

// Forward tape and reverse pass shared by grad_wrt_activation and training.

#include <optional>
#include <span>
#include <vector>

#include "steerkit/model.hpp"

namespace steerkit::detail {

struct LayerTape {
    Matrix ln1_xhat, ln1_out;  // [T x d]
    std::vector<double> ln1_rstd;
    Matrix q, k, v;            // [T x d]
    std::vector<Matrix> probs;  // per head [T x T], lower triangular
    Matrix attn_concat;        // head outputs before Wo [T x d]
    Matrix ln2_xhat, ln2_out;
    std::vector<double> ln2_rstd;
    Matrix ff_pre, ff_act;     // [T x d_ff]
};

struct Tape {
    std::vector<Token> tokens;
    std::vector<LayerTape> layers;
    Matrix final_xhat, final_out;  // [T x d]; final_out is the unembedding input
    std::vector<double> final_rstd;
    Matrix logits;                 // [T x V]
};

// Runs the model over tokens, filling the tape and (optionally) the cache.
void forward_with_tape(const Weights& weights, std::span<const Token> tokens,
                       std::span<const Intervention> interventions, int prompt_length, Tape& tape,
                       ActivationCache* cache);

struct BackwardRequest {
    // Upstream d(loss)/d(logits) [T x V].
    const Matrix* dlogits = nullptr;
    // Positions >= active_len have zero upstream gradient everywhere.
    int active_len = 0;
    // Collect residual-stream gradients for layers >= lowest_layer.
    std::optional<int> lowest_layer;
    ResidualGradients* residual_out = nullptr;
    // Accumulate parameter gradients (same layout as Weights).
    Weights* param_grads = nullptr;
};

void backward(const Weights& weights, const Tape& tape, const BackwardRequest& request);

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline double gelu(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Validation shared by forward and generate.
void check_tokens(const ModelConfig& config, std::span<const Token> tokens);
void check_interventions(const ModelConfig& config, std::span<const Intervention> interventions);

}  // namespace steerkit::detail
