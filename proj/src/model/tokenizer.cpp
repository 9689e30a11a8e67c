#include "steerkit/tokenizer.hpp"

namespace steerkit::tokenizer {

std::vector<Token> encode(std::string_view text) {
    std::vector<Token> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<Token>(c));
    return out;
}

std::string decode(std::span<const Token> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (Token t : tokens) {
        if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

std::vector<TokenOffset> byte_offsets(std::string_view text) {
    std::vector<TokenOffset> out(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) out[i] = {i, i + 1};
    return out;
}

std::vector<Token> encode_task_prompt(std::string_view prompt) {
    std::vector<Token> out{kBos};
    const auto body = encode(std::string("Task: ") + std::string(prompt) + "\n");
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

}  // namespace steerkit::tokenizer
