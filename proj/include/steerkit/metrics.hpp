#pragma once

// Next-token distribution comparisons.

#include <span>
#include <vector>

#include "steerkit/model.hpp"

namespace steerkit {

// Numerically stable log(softmax(logits)).
std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

// KL(softmax(clean) || softmax(patched)), >= 0. Throws InvalidArgument on a
// length mismatch and NonFiniteValue on non-finite input.
double kl_next_token(std::span<const double> logits_clean, std::span<const double> logits_patched);

// KL(reference || softmax(logits)) for a fixed probability vector. Entries
// of `reference` equal to zero contribute nothing.
double kl_from_reference(std::span<const double> reference, std::span<const double> logits);

// Metric KL(reference || softmax(logits at readout)); its logit gradient is
// softmax(logits) - reference.
LogitMetric kl_metric(std::vector<double> reference, std::optional<int> readout_position = std::nullopt);

// Metric reading the raw logit of one token.
LogitMetric token_logit_metric(Token token, std::optional<int> readout_position = std::nullopt);

}  // namespace steerkit
