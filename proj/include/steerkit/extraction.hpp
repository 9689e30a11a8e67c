#pragma once

// Difference-of-means steering vectors.
//
// For category c and layer l:
//   u = mean_{p in D+} mean_{t in spans_c(p)} a_l(t)  -  mean_{p in D-} mean_{t in p} a_l(t)
// where D+ holds the prompts with at least one c segment, D- is the whole
// corpus, and the second mean runs over every token of p, prompt included.
// The normalized vector is u rescaled to the norm of the pooled mean
// activation over every token of the corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/annotations.hpp"
#include "steerkit/corpus.hpp"
#include "steerkit/model.hpp"

namespace steerkit {

struct ContrastiveSplit {
    BehaviorLabel category;
    std::vector<std::string> d_plus;   // ids with >= 1 segment of the category
    std::vector<std::string> d_minus;  // every id
};

ContrastiveSplit make_split(std::span<const AnnotatedPrompt> corpus, BehaviorLabel category);

// Union of the positions of every span labeled `category`, ascending.
std::vector<int> category_positions(const TokenSpanSet& spans, BehaviorLabel category);

// Mean residual at `layer` over category_positions. Throws InvalidArgument
// when the category has no span in this prompt.
std::vector<double> category_mean(const ActivationCache& cache, const TokenSpanSet& spans, BehaviorLabel category,
                                  int layer);

// Mean residual at `layer` over every position.
std::vector<double> all_token_mean(const ActivationCache& cache, int layer);

struct PromptActivations {
    std::string id;
    ActivationCache cache;
    TokenSpanSet spans;
};

// Throws InvalidArgument for an empty D+, a layer out of range or an id
// without activations.
std::vector<double> difference_of_means(std::span<const PromptActivations> corpus, const ContrastiveSplit& split,
                                        int layer);

// raw * (target_norm / |raw|). Throws InvalidArgument on a zero raw vector
// or a non-positive target.
std::vector<double> normalize_vector(std::span<const double> raw, double target_norm);
std::vector<double> normalize_vector(std::span<const double> raw, std::span<const double> overall_mean);

// Single-pass accumulation of everything the bank needs, one prompt at a
// time in a fixed order.
class DiffMeansAccumulator {
public:
    DiffMeansAccumulator(int n_layers, int d_model, std::vector<BehaviorLabel> categories);

    void add(const ActivationCache& cache, const TokenSpanSet& spans);

    int n_layers() const { return n_layers_; }
    int d_model() const { return d_model_; }
    int prompt_count() const { return prompts_; }
    long token_count() const { return tokens_; }
    int d_plus_count(BehaviorLabel category) const;
    const std::vector<BehaviorLabel>& categories() const { return categories_; }

    // Empty when the category never occurred.
    std::optional<std::vector<double>> raw(BehaviorLabel category, int layer) const;
    std::vector<double> overall_mean(int layer) const;

private:
    std::size_t slot(BehaviorLabel category) const;

    int n_layers_;
    int d_model_;
    std::vector<BehaviorLabel> categories_;
    int prompts_ = 0;
    long tokens_ = 0;
    std::vector<int> d_plus_;
    std::vector<double> category_sum_;  // [category][layer][d], sum of per-prompt means
    std::vector<double> prompt_sum_;    // [layer][d], sum of per-prompt all-token means
    std::vector<double> token_sum_;     // [layer][d], sum over every token
};

struct SteeringVector {
    BehaviorLabel category;
    int layer = 0;
    std::vector<double> raw;
    std::vector<double> normalized;
    double overall_mean_norm = 0.0;
    std::uint64_t corpus_hash = 0;
    int d_plus_count = 0;
    int d_minus_count = 0;

    friend bool operator==(const SteeringVector&, const SteeringVector&) = default;
};

struct BankSkip {
    BehaviorLabel category;
    std::optional<int> layer;  // nullopt: the whole category
    std::string reason;

    friend bool operator==(const BankSkip&, const BankSkip&) = default;
};

class SteeringVectorBank {
public:
    using Key = std::pair<BehaviorLabel, int>;

    SteeringVectorBank() = default;
    SteeringVectorBank(int d_model, int n_layers, std::uint64_t model_fingerprint, std::uint64_t corpus_hash);

    // Throws InvalidArgument on a duplicate key or a d_model mismatch.
    void insert(SteeringVector v);
    const SteeringVector* find(BehaviorLabel category, int layer) const;
    // Throws InvalidArgument naming the missing entry.
    const SteeringVector& at(BehaviorLabel category, int layer) const;
    bool has_category(BehaviorLabel category) const;
    std::vector<BehaviorLabel> categories() const;

    const std::map<Key, SteeringVector>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    int d_model() const { return d_model_; }
    int n_layers() const { return n_layers_; }
    std::uint64_t model_fingerprint() const { return model_fingerprint_; }
    std::uint64_t corpus_hash() const { return corpus_hash_; }

    // Entries left out during the build, with reasons.
    std::vector<BankSkip> skipped;

    friend bool operator==(const SteeringVectorBank&, const SteeringVectorBank&) = default;

private:
    int d_model_ = 0;
    int n_layers_ = 0;
    std::uint64_t model_fingerprint_ = 0;
    std::uint64_t corpus_hash_ = 0;
    std::map<Key, SteeringVector> entries_;
};

// Builds the bank from an accumulator that has seen the whole corpus.
SteeringVectorBank bank_from_accumulator(const DiffMeansAccumulator& acc, std::uint64_t model_fingerprint,
                                         std::uint64_t corpus_hash);

// Runs the model over every prompt (clean forward pass) and extracts one
// vector per (category, layer) with a non-empty D+. Categories absent from
// the corpus land in bank.skipped.
SteeringVectorBank build_bank(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                              std::span<const BehaviorLabel> categories = kSteeredLabels);

// Bank file: "STKBANK1", u64 header length, JSON header, then per entry (in
// header order) raw and normalized as little-endian f64, then a u64 FNV-1a
// checksum of everything before it.
std::vector<std::uint8_t> serialize_bank(const SteeringVectorBank& bank);
SteeringVectorBank deserialize_bank(std::span<const std::uint8_t> bytes);
void save_bank(const SteeringVectorBank& bank, const std::filesystem::path& path);
SteeringVectorBank load_bank(const std::filesystem::path& path);

}  // namespace steerkit
