#pragma once

// Reference decoder-only transformer with residual-stream hook points.
//
// Architecture: learned token + position embeddings, n_layers pre-norm
// blocks (LayerNorm -> causal multi-head attention -> residual add,
// LayerNorm -> GELU MLP -> residual add), optional final LayerNorm, and an
// untied unembedding. All activation math runs in double precision.
//
// The hook point for layer l is the block output after its second residual
// addition, i.e. exactly the vector block l+1 reads. Interventions add
// coefficient * vector there; the cache records the post-intervention value.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

using Token = std::int32_t;

struct ModelConfig {
    int n_layers = 2;
    int d_model = 32;
    int n_heads = 4;
    int d_ff = 64;
    int vocab_size = 258;
    int max_seq_len = 256;
    double layernorm_epsilon = 1e-5;
    // Off turns the readout into a plain linear map of the last residual,
    // which the analytic test models rely on.
    bool final_norm = true;

    int head_dim() const { return d_model / n_heads; }

    // Throws InvalidArgument naming the first violated constraint.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
    std::vector<double> ln1_gain, ln1_bias;  // [d_model]
    Matrix wq, wk, wv, wo;                   // [d_model x d_model], y = W x
    std::vector<double> ln2_gain, ln2_bias;  // [d_model]
    Matrix w_up;                             // [d_ff x d_model]
    std::vector<double> b_up;                // [d_ff]
    Matrix w_down;                           // [d_model x d_ff]
    std::vector<double> b_down;              // [d_model]

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

// A named view of one parameter block, used by serialization and training.
template <class T>
struct BasicParameterRef {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<T> values;
};
using ParameterRef = BasicParameterRef<double>;
using ConstParameterRef = BasicParameterRef<const double>;

struct Weights {
    ModelConfig config;
    Matrix token_embedding;     // E: [vocab_size x d_model]
    Matrix position_embedding;  // [max_seq_len x d_model]
    std::vector<LayerWeights> layers;
    std::vector<double> final_gain, final_bias;  // [d_model]
    Matrix unembedding;         // U: [vocab_size x d_model]

    // Correctly shaped, all-zero parameters except unit LayerNorm gains.
    static Weights zeros(const ModelConfig& config);

    // Parameter blocks in canonical (file) order.
    std::vector<ParameterRef> parameters();
    std::vector<ConstParameterRef> parameters() const;
    std::size_t parameter_count() const;

    // Shapes agree with config and every entry is finite; throws otherwise.
    void validate() const;

    // Rounds every parameter to the nearest float32, the on-disk precision.
    void round_to_storage_precision();

    friend bool operator==(const Weights&, const Weights&) = default;
};

// Which token positions an intervention touches.
struct PositionFilter {
    enum class Kind { all, generated, explicit_set };
    Kind kind = Kind::all;
    std::vector<int> positions;  // explicit_set only

    static PositionFilter all() { return {Kind::all, {}}; }
    static PositionFilter generated() { return {Kind::generated, {}}; }
    static PositionFilter at(std::vector<int> positions) { return {Kind::explicit_set, std::move(positions)}; }

    // Generated positions are those >= prompt_length.
    bool admits(int position, int prompt_length) const;
};

struct Intervention {
    int layer = 0;
    std::vector<double> vector;
    double coefficient = 1.0;
    PositionFilter filter = PositionFilter::all();
};

// Residual stream after every block plus the logits at every position.
struct ActivationCache {
    int n_layers = 0;
    int seq_len = 0;
    int d_model = 0;
    std::vector<double> residual;  // [n_layers x seq_len x d_model]
    Matrix logits;                 // [seq_len x vocab_size]

    std::span<const double> at(int layer, int position) const {
        return {residual.data() + (static_cast<std::size_t>(layer) * seq_len + position) * d_model,
                static_cast<std::size_t>(d_model)};
    }
    std::span<double> at(int layer, int position) {
        return {residual.data() + (static_cast<std::size_t>(layer) * seq_len + position) * d_model,
                static_cast<std::size_t>(d_model)};
    }
};

// Runs the model over `tokens`. Positions >= prompt_length count as
// generated for PositionFilter::generated; by default the whole input is
// treated as prompt. Deterministic for fixed inputs.
ActivationCache forward(const Weights& weights, std::span<const Token> tokens,
                        std::span<const Intervention> interventions = {},
                        std::optional<int> prompt_length = std::nullopt);

inline constexpr int kDefaultMaxNewTokens = 1000;

struct GenerateOptions {
    int max_new_tokens = kDefaultMaxNewTokens;
    std::optional<Token> eos_token;
};

// Greedy decoding (argmax, ties to the lowest token id). The EOS token, when
// produced, ends generation and is not included in the result. Throws
// ContextOverflow when prompt + max_new_tokens exceeds max_seq_len.
std::vector<Token> generate(const Weights& weights, std::span<const Token> prompt, const GenerateOptions& options,
                            std::span<const Intervention> interventions = {});

// A differentiable scalar read from the logits at one position. `evaluate`
// returns the value and writes d(value)/d(logits) into `grad`.
struct LogitMetric {
    std::function<double(std::span<const double> logits, std::span<double> grad)> evaluate;
    // Position whose logits feed the metric; nullopt means the last one.
    std::optional<int> readout_position;
};

// Reverse-mode gradients of a metric with respect to the residual stream.
struct ResidualGradients {
    double metric_value = 0.0;
    int n_layers = 0;
    int seq_len = 0;
    int d_model = 0;
    std::vector<double> grads;  // [n_layers x seq_len x d_model]

    std::span<const double> at(int layer, int position) const {
        return {grads.data() + (static_cast<std::size_t>(layer) * seq_len + position) * d_model,
                static_cast<std::size_t>(d_model)};
    }
};

ResidualGradients residual_gradients(const Weights& weights, std::span<const Token> tokens, const LogitMetric& metric,
                                     std::span<const Intervention> interventions = {});

// d(metric)/d(residual[layer][position]) holding everything else fixed.
std::vector<double> grad_wrt_activation(const Weights& weights, std::span<const Token> tokens, int layer, int position,
                                        const LogitMetric& metric, std::span<const Intervention> interventions = {});

}  // namespace steerkit
