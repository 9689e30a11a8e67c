#include "steerkit/corpus.hpp"

#include "steerkit/errors.hpp"
#include "steerkit/hash.hpp"
#include "steerkit/tokenizer.hpp"

namespace steerkit {

TokenSpanSet spans_for(const AnnotatedPrompt& prompt) {
    const auto n = static_cast<int>(prompt.tokens.size());
    if (prompt.prompt_length < 0 || prompt.prompt_length > n) {
        throw InvalidArgument("prompt '" + prompt.id + "': prompt_length " + std::to_string(prompt.prompt_length) +
                              " outside [0, " + std::to_string(n) + "]");
    }
    const std::string& text = prompt.chain.raw_text;
    if (static_cast<std::size_t>(n - prompt.prompt_length) != text.size()) {
        throw InvalidArgument("prompt '" + prompt.id + "': chain text has " + std::to_string(text.size()) +
                              " bytes but " + std::to_string(n - prompt.prompt_length) + " tokens were generated");
    }
    for (int i = prompt.prompt_length; i < n; ++i) {
        const Token t = prompt.tokens[static_cast<std::size_t>(i)];
        if (t != static_cast<unsigned char>(text[static_cast<std::size_t>(i - prompt.prompt_length)])) {
            throw InvalidArgument("prompt '" + prompt.id + "': chain text disagrees with generated token at position " +
                                  std::to_string(i));
        }
    }
    const auto offsets = tokenizer::byte_offsets(text);
    return align_spans(prompt.chain, offsets, prompt.prompt_length);
}

std::uint64_t corpus_hash(std::span<const AnnotatedPrompt> corpus) {
    Fnv1a64 h;
    h.update_u64(corpus.size());
    for (const auto& p : corpus) {
        h.field(p.id);
        h.update_u64(static_cast<std::uint64_t>(p.prompt_length));
        h.update_u64(p.tokens.size());
        for (Token t : p.tokens) h.update_u64(static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)));
        h.field(render_annotated(p.chain));
    }
    return h.digest();
}

}  // namespace steerkit
