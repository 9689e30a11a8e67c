#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "steerkit/model.hpp"

namespace steerkit {

// Seeded initialization, already rounded to storage precision.
Weights initialize_weights(const ModelConfig& config, std::uint64_t seed);

struct FitOptions {
    double learning_rate = 3e-3;
    int batch_size = 8;
    // Full-corpus loss is measured every this many steps (>= 10).
    int checkpoint_interval = 50;
    double grad_clip = 1.0;
    // Cosine decay of the learning rate down to this fraction of the peak.
    double final_lr_fraction = 0.1;
};

struct LossCheckpoint {
    int step = 0;
    double loss = 0.0;
};

struct FitReport {
    std::vector<LossCheckpoint> checkpoints;
    // Set when any checkpoint loss exceeds the previous one.
    bool diverged = false;
};

struct FitResult {
    Weights weights;
    FitReport report;
};

// Mean next-token cross-entropy over every position of every sequence.
double corpus_loss(const Weights& weights, std::span<const std::vector<Token>> corpus);

// Adam on next-token cross-entropy over minibatches sampled with `seed`.
// Deterministic in (corpus, config, steps, seed, options). steps == 0
// returns initialize_weights(config, seed). Throws InvalidArgument for an
// empty corpus and TrainingError when the loss becomes non-finite.
FitResult fit_toy_model(std::span<const std::vector<Token>> corpus, const ModelConfig& config, int steps,
                        std::uint64_t seed, const FitOptions& options = {});

}  // namespace steerkit
