#pragma once

// Behavior-shift statistics over steering runs, cosine matrices between
// steering vectors, corpus-level behavior summaries, and the report bundle
// (report.json, tables/*.csv, figures/*.svg).

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerkit/annotations.hpp"
#include "steerkit/attribution.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/steering.hpp"

namespace steerkit {

inline constexpr int kReportSchemaVersion = 1;

enum class FractionBasis { tokens, sentences };

std::string_view to_string(FractionBasis basis);
// "tokens" or "sentences"; throws InvalidArgument otherwise.
FractionBasis parse_fraction_basis(std::string_view name);

struct TaskDelta {
    std::string task_id;
    double baseline = 0.0;
    double steered = 0.0;
    double delta = 0.0;
};

struct SteeringEffect {
    BehaviorLabel category;
    int sign = 0;
    double alpha = 0.0;
    FractionBasis basis = FractionBasis::tokens;
    double delta = 0.0;                 // mean over tasks, in [-1, 1]
    std::vector<TaskDelta> per_task;    // sorted by task id
    int task_count = 0;
    std::vector<std::string> unpaired;  // steered task ids without a baseline, and vice versa; sorted

    // sign +1 expects delta > 0, sign -1 expects delta < 0.
    bool matches_expected_sign() const { return sign > 0 ? delta > 0.0 : delta < 0.0; }
};

// Pairs runs by task id. Steered runs are those with the given category,
// sign and alpha; baselines are the sign-0 runs. The measured fraction is
// that of `category` itself. Throws InvalidArgument when no task pairs up or
// a run lacks stats.
SteeringEffect steering_effect(std::span<const SteeringRun> runs, BehaviorLabel category, int sign, double alpha,
                               FractionBasis basis = FractionBasis::tokens);

// One effect per (category, sign, alpha) present among the steered runs, in
// (category, sign descending, alpha) order.
std::vector<SteeringEffect> all_steering_effects(std::span<const SteeringRun> runs,
                                                 FractionBasis basis = FractionBasis::tokens);

// Full-fidelity JSON list ({"schema_version", "effects"}) and back. Throws
// FormatError on parse.
std::string effects_to_json(std::span<const SteeringEffect> effects);
std::vector<SteeringEffect> effects_from_json(std::string_view text);

// A category passes when it has effects for both signs and every one of
// them moves in the expected direction.
struct SignCheck {
    std::vector<std::pair<BehaviorLabel, bool>> categories;  // label order
    int passing = 0;
    int total = 0;
};

SignCheck sign_check(std::span<const SteeringEffect> effects);

struct CosineMatrix {
    std::vector<BehaviorLabel> categories;
    std::vector<int> layers;                  // layer used per category
    std::vector<std::vector<double>> values;  // symmetric, unit diagonal
};

// Cosines between the raw vectors of each profile category at its selected
// layer. Throws InvalidArgument when the bank lacks one of them.
CosineMatrix cosine_matrix(const SteeringVectorBank& bank, const LayerAttributionProfile& profile);

// Same, at explicitly chosen layers.
CosineMatrix cosine_matrix(const SteeringVectorBank& bank, std::span<const std::pair<BehaviorLabel, int>> selection);

struct CorpusSummary {
    std::string name;
    int chain_count = 0;
    double mean_sentences = 0.0;
    // Pooled over every sentence of every chain.
    std::array<double, kLabelCount> sentence_fraction{};
};

// Throws InvalidArgument on an empty corpus.
CorpusSummary summarize_corpus(std::string name, std::span<const AnnotatedChain> chains);

std::vector<CorpusSummary> corpus_comparison(
    std::span<const std::pair<std::string, std::vector<AnnotatedChain>>> corpora);

struct ReportInputs {
    const LayerAttributionProfile* profile = nullptr;
    std::optional<CosineMatrix> cosines;
    std::vector<SteeringEffect> effects;
    std::vector<CorpusSummary> corpora;
};

// Writes report.json, tables/*.csv and figures/*.svg under `dir` and returns
// the written paths relative to it, sorted. Output bytes depend only on the
// inputs. Throws IoError when the directory is not writable.
std::vector<std::string> emit_report(const ReportInputs& inputs, const std::filesystem::path& dir);

}  // namespace steerkit
