#include <cmath>
#include <string>

#include "steerkit/errors.hpp"
#include "steerkit/model.hpp"

namespace steerkit {

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw InvalidArgument("invalid model config: " + what);
    };
    require(n_layers >= 1, "n_layers must be >= 1");
    require(d_model >= 1, "d_model must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(vocab_size >= 1, "vocab_size must be >= 1");
    require(max_seq_len >= 2, "max_seq_len must be >= 2");
    require(std::isfinite(layernorm_epsilon) && layernorm_epsilon > 0.0, "layernorm_epsilon must be positive");
}

Weights Weights::zeros(const ModelConfig& config) {
    config.validate();
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto f = static_cast<std::size_t>(config.d_ff);
    Weights w;
    w.config = config;
    w.token_embedding = Matrix(config.vocab_size, d);
    w.position_embedding = Matrix(config.max_seq_len, d);
    w.layers.resize(config.n_layers);
    for (auto& l : w.layers) {
        l.ln1_gain.assign(d, 1.0);
        l.ln1_bias.assign(d, 0.0);
        l.wq = l.wk = l.wv = l.wo = Matrix(d, d);
        l.ln2_gain.assign(d, 1.0);
        l.ln2_bias.assign(d, 0.0);
        l.w_up = Matrix(f, d);
        l.b_up.assign(f, 0.0);
        l.w_down = Matrix(d, f);
        l.b_down.assign(d, 0.0);
    }
    w.final_gain.assign(d, 1.0);
    w.final_bias.assign(d, 0.0);
    w.unembedding = Matrix(config.vocab_size, d);
    return w;
}

namespace {

ParameterRef ref(std::string name, Matrix& m) { return {std::move(name), {m.rows(), m.cols()}, m.flat()}; }
ParameterRef ref(std::string name, std::vector<double>& v) { return {std::move(name), {v.size()}, v}; }

}  // namespace

std::vector<ParameterRef> Weights::parameters() {
    std::vector<ParameterRef> out;
    out.push_back(ref("token_embedding", token_embedding));
    out.push_back(ref("position_embedding", position_embedding));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        out.push_back(ref(p + "ln1_gain", l.ln1_gain));
        out.push_back(ref(p + "ln1_bias", l.ln1_bias));
        out.push_back(ref(p + "wq", l.wq));
        out.push_back(ref(p + "wk", l.wk));
        out.push_back(ref(p + "wv", l.wv));
        out.push_back(ref(p + "wo", l.wo));
        out.push_back(ref(p + "ln2_gain", l.ln2_gain));
        out.push_back(ref(p + "ln2_bias", l.ln2_bias));
        out.push_back(ref(p + "w_up", l.w_up));
        out.push_back(ref(p + "b_up", l.b_up));
        out.push_back(ref(p + "w_down", l.w_down));
        out.push_back(ref(p + "b_down", l.b_down));
    }
    out.push_back(ref("final_gain", final_gain));
    out.push_back(ref("final_bias", final_bias));
    out.push_back(ref("unembedding", unembedding));
    return out;
}

std::vector<ConstParameterRef> Weights::parameters() const {
    // Same traversal as the mutable overload; nothing is written through it.
    auto mutable_refs = const_cast<Weights*>(this)->parameters();
    std::vector<ConstParameterRef> out;
    out.reserve(mutable_refs.size());
    for (auto& p : mutable_refs) out.push_back({std::move(p.name), std::move(p.shape), p.values});
    return out;
}

std::size_t Weights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.values.size();
    return n;
}

void Weights::validate() const {
    config.validate();
    const Weights expected = zeros(config);
    const auto self = parameters();
    const auto want = expected.parameters();
    if (self.size() != want.size()) {
        throw ShapeMismatch("expected " + std::to_string(want.size()) + " parameter blocks, found " +
                            std::to_string(self.size()));
    }
    for (std::size_t i = 0; i < self.size(); ++i) {
        if (self[i].shape != want[i].shape) throw ShapeMismatch("parameter block '" + self[i].name + "' has wrong shape");
        if (!all_finite(self[i].values)) {
            throw NonFiniteValue("parameter block '" + self[i].name + "' contains non-finite values");
        }
    }
}

void Weights::round_to_storage_precision() {
    for (auto& p : parameters()) {
        for (double& v : p.values) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace steerkit
