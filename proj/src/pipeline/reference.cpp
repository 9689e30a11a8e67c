#include "steerkit/reference.hpp"

#include <array>
#include <random>

#include "steerkit/errors.hpp"
#include "steerkit/tokenizer.hpp"

namespace steerkit {

ModelConfig reference_model_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 48;
    c.n_heads = 4;
    c.d_ff = 128;
    c.vocab_size = tokenizer::kVocabSize;
    c.max_seq_len = 512;
    return c;
}

namespace {

enum Kind { knowledge, example, uncertainty, backtrack, deduce, kKinds };

constexpr std::array<std::array<const char*, 3>, kKinds> kSentences{{
    {"Recall the rule for this.", "Recall that the parts add up.", "Recall how this works."},
    {"For example, try a small case.", "For example, use two.", "For example, take the first one."},
    {"Maybe that is the answer.", "Perhaps it might be off.", "Maybe I am not sure."},
    {"Wait, that is not right.", "Wait, I made a mistake.", "Wait, let me check again."},
    {"So the next step is clear.", "Then the count works out.", "Thus it follows."},
}};

constexpr std::array<const char*, 3> kOpenings{"Okay, let me look at this task.", "First, I need to read the question.",
                                               "Okay, let me think about it."};
constexpr std::array<const char*, 2> kClosings{"So the answer is done.", "So that is the answer."};

std::size_t draw(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

std::string synthetic_chain(int category_index, std::uint64_t seed, const ReferenceCorpusOptions& options) {
    if (category_index < 0 || category_index >= static_cast<int>(kTaskCategories.size())) {
        throw InvalidArgument("task category index out of range");
    }
    if (options.min_sentences < 1 || options.max_sentences < options.min_sentences) {
        throw InvalidArgument("reference corpus sentence bounds are inconsistent");
    }
    if (!(options.stay_probability >= 0.0 && options.stay_probability <= 1.0)) {
        throw InvalidArgument("stay_probability must be in [0, 1]");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::string text = kOpenings[draw(rng, kOpenings.size())];
    const int count = options.min_sentences +
                      static_cast<int>(draw(rng, static_cast<std::size_t>(options.max_sentences - options.min_sentences + 1)));
    std::size_t at = static_cast<std::size_t>(category_index) % kKinds;
    for (int i = 0; i < count; ++i) {
        if (i > 0 && unit(rng) >= options.stay_probability) at = (at + 1 + draw(rng, kKinds - 1)) % kKinds;
        const auto& choices = kSentences[at];
        text += " ";
        text += choices[draw(rng, choices.size())];
    }
    text += " ";
    text += kClosings[draw(rng, kClosings.size())];
    return text;
}

std::vector<std::vector<Token>> reference_training_corpus(std::span<const TaskRecord> tasks,
                                                          const ReferenceCorpusOptions& options) {
    if (options.chains_per_task < 1) throw InvalidArgument("chains_per_task must be >= 1");
    std::vector<std::vector<Token>> corpus;
    std::mt19937_64 seeds(options.seed);
    for (const auto& task : tasks) {
        const auto category = task_category_index(task.category);
        if (!category) throw InvalidArgument("unknown task category \"" + task.category + "\"");
        for (int k = 0; k < options.chains_per_task; ++k) {
            auto seq = tokenizer::encode_task_prompt(task.prompt);
            const auto body = tokenizer::encode(synthetic_chain(*category, seeds(), options));
            seq.insert(seq.end(), body.begin(), body.end());
            seq.push_back(tokenizer::kEos);
            corpus.push_back(std::move(seq));
        }
    }
    return corpus;
}

FitResult train_reference_model(std::span<const TaskRecord> tasks, const ReferenceTrainingOptions& options) {
    const auto corpus = reference_training_corpus(tasks, options.corpus);
    return fit_toy_model(corpus, reference_model_config(), options.steps, options.seed, options.fit);
}

}  // namespace steerkit
