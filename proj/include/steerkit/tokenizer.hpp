#pragma once

// Byte-level tokenizer: token i < 256 is byte i, plus two specials. Token
// offsets are byte offsets, so any annotation over the decoded text aligns
// without a vocabulary file.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/annotations.hpp"
#include "steerkit/model.hpp"

namespace steerkit::tokenizer {

inline constexpr Token kBos = 256;
inline constexpr Token kEos = 257;
inline constexpr int kVocabSize = 258;

std::vector<Token> encode(std::string_view text);
// Special tokens are dropped.
std::string decode(std::span<const Token> tokens);

// Byte offsets of each token of encode(text): token i covers [i, i + 1).
std::vector<TokenOffset> byte_offsets(std::string_view text);

// Conditioning prefix the reference model is trained on:
// BOS "Task: " prompt "\n".
std::vector<Token> encode_task_prompt(std::string_view prompt);

}  // namespace steerkit::tokenizer
