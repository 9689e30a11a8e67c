#pragma once

#include <string>
#include <string_view>

#include "steerkit/model.hpp"
#include "steerkit/tokenizer.hpp"

namespace steerkit::testing {

// Identity-block model whose residual stream is a one-hot position code and
// whose readout emits script[pos] at each position. Every prompt of a given
// length therefore continues with the same text.
inline Weights script_model(std::string_view script, int max_seq = 128) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = max_seq;
    c.n_heads = 2;
    c.d_ff = 4;
    c.vocab_size = tokenizer::kVocabSize;
    c.max_seq_len = max_seq;
    c.final_norm = false;
    auto w = Weights::zeros(c);
    for (int p = 0; p < max_seq; ++p) {
        w.position_embedding(p, p) = 1.0;
        const auto ch = static_cast<unsigned char>(script[static_cast<std::size_t>(p) % script.size()]);
        w.unembedding(ch, p) = 8.0;
    }
    return w;
}

inline constexpr std::string_view kScript =
    "Okay, start here. I remember the rule. Wait, that is wrong. Maybe it is five. "
    "For example, take one. So it is done. ";

}  // namespace steerkit::testing
