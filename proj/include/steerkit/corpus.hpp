#pragma once

// A generated reasoning chain together with its annotation: the unit the
// extraction and attribution stages consume.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steerkit/annotations.hpp"
#include "steerkit/model.hpp"

namespace steerkit {

struct AnnotatedPrompt {
    std::string id;
    std::vector<Token> tokens;  // prompt followed by the generated chain
    int prompt_length = 0;
    AnnotatedChain chain;       // raw_text is the decoded generated part
};

// Segment spans at absolute token positions (byte tokenizer offsets,
// shifted past the prompt). Throws InvalidArgument when the chain text does
// not match the generated tokens.
TokenSpanSet spans_for(const AnnotatedPrompt& prompt);

// Content hash over ids, tokens and annotations, in order.
std::uint64_t corpus_hash(std::span<const AnnotatedPrompt> corpus);

}  // namespace steerkit
