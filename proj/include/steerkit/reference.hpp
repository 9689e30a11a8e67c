#pragma once

// The bundled reference model: a small byte-level model trained on
// synthetic reasoning chains whose sentences carry the surface markers the
// mock annotator keys on.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steerkit/model.hpp"
#include "steerkit/tasks.hpp"
#include "steerkit/training.hpp"

namespace steerkit {

ModelConfig reference_model_config();

struct ReferenceCorpusOptions {
    int chains_per_task = 4;
    int min_sentences = 8;
    int max_sentences = 12;
    // Probability that a sentence has the same kind as the one before it.
    double stay_probability = 0.8;
    std::uint64_t seed = 1;
};

// One synthetic chain: an opening sentence, then sentences whose kind starts
// at one picked by the task category and persists from sentence to sentence
// with stay_probability, then a closing sentence. Deterministic in
// (category_index, seed).
std::string synthetic_chain(int category_index, std::uint64_t seed, const ReferenceCorpusOptions& options = {});

// Task prompt + chain + EOS for every task, chains_per_task times.
std::vector<std::vector<Token>> reference_training_corpus(std::span<const TaskRecord> tasks,
                                                          const ReferenceCorpusOptions& options = {});

struct ReferenceTrainingOptions {
    ReferenceCorpusOptions corpus;
    int steps = 1500;
    std::uint64_t seed = 1;
    FitOptions fit;
};

FitResult train_reference_model(std::span<const TaskRecord> tasks, const ReferenceTrainingOptions& options = {});

}  // namespace steerkit
