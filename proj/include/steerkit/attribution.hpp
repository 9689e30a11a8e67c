#pragma once

// Attribution patching over steering-vector candidates, the exact patching
// oracle, embedding screening and layer selection.
//
// The patch at (layer, position) is a -> a + u. The metric reads the
// next-token distribution at the patched position itself:
//   next_token        L = KL(onehot(observed next token) || softmax(logits)),
//                     i.e. the negative log-likelihood of the token that
//                     actually follows (the first token of the span).
//   clean_prediction  L = KL(softmax(clean logits) || softmax(logits)).
//                     Its gradient at the clean run is identically zero, so
//                     delta_attr is always 0; kept for comparison only.
// delta_exact = L(patched) - L(clean), delta_attr = u . dL/da at the clean run.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/annotations.hpp"
#include "steerkit/corpus.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/model.hpp"

namespace steerkit {

enum class AttributionMetric { next_token, clean_prediction };

std::string_view to_string(AttributionMetric metric);
AttributionMetric parse_attribution_metric(std::string_view name);

// Which bank vector is patched in.
enum class PatchVector { raw, normalized };

struct AttributionOptions {
    AttributionMetric metric = AttributionMetric::next_token;
    PatchVector vector = PatchVector::raw;
    // Off: only the token preceding each span. On: every span position.
    bool all_span_positions = false;
};

// The metric L for a patch at `position` of `tokens`. Throws InvalidArgument
// when the position is out of range or, for next_token, has no successor.
LogitMetric patching_metric(const Weights& weights, std::span<const Token> tokens, int position,
                            AttributionMetric metric);

// Low-level forms: any vector at any (layer, position).
double attribution_effect(const Weights& weights, std::span<const Token> tokens, std::span<const double> u, int layer,
                          int position, AttributionMetric metric = AttributionMetric::next_token);
double exact_patching_effect(const Weights& weights, std::span<const Token> tokens, std::span<const double> u,
                             int layer, int position, AttributionMetric metric = AttributionMetric::next_token);

// Checked forms: `position` must be a qualifying position (per
// options.all_span_positions) of a span labeled v.category.
double attribution_effect(const Weights& weights, const AnnotatedPrompt& prompt, const SteeringVector& v,
                          int position, const AttributionOptions& options = {});
double exact_patching_effect(const Weights& weights, const AnnotatedPrompt& prompt, const SteeringVector& v,
                             int position, const AttributionOptions& options = {});

// Positions a category is scored at in one prompt, one entry per span
// (a position can repeat when spans share it). Positions without a next
// token are dropped under the next_token metric.
std::vector<int> qualifying_positions(const TokenSpanSet& spans, int seq_len, BehaviorLabel category,
                                      const AttributionOptions& options);

struct PatchingEffect {
    std::string prompt_id;
    BehaviorLabel category;
    int layer = 0;
    int position = 0;
    double delta_attr = 0.0;
    std::optional<double> delta_exact;
    double metric_clean = 0.0;
};

// delta_attr for every qualifying position of every category in `categories`
// at every layer, in corpus order. The gradient at a position does not depend
// on the category, so it is computed once per distinct position. With
// `with_exact` each effect also carries delta_exact.
std::vector<PatchingEffect> patching_effects(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                                             const SteeringVectorBank& bank,
                                             std::span<const BehaviorLabel> categories,
                                             const AttributionOptions& options = {}, bool with_exact = false);

struct CategoryScores {
    std::vector<double> layer_scores;  // mean |delta_attr| per layer
    int span_count = 0;                // qualifying positions averaged over
};

// Mean |delta_attr| per layer for `category`. Throws InvalidArgument when no
// effect has that category.
CategoryScores aggregate_layer_scores(std::span<const PatchingEffect> effects, BehaviorLabel category, int n_layers);

// Convenience: effects + aggregation for one category.
CategoryScores aggregate_layer_scores(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                                      const SteeringVectorBank& bank, BehaviorLabel category,
                                      const AttributionOptions& options = {});

struct LayerSimilarity {
    double max_embed_cos = 0.0;
    double max_unembed_cos = 0.0;
    int embed_argmax = 0;
    int unembed_argmax = 0;

    friend bool operator==(const LayerSimilarity&, const LayerSimilarity&) = default;
};

// Maximum cosine between the vector and every row of E and of U.
LayerSimilarity vector_similarity(std::span<const double> u, const Weights& weights);

// Per category, per layer (index = layer; layers missing from the bank stay
// default). Throws InvalidArgument on a d_model mismatch.
std::map<BehaviorLabel, std::vector<LayerSimilarity>> embedding_similarity_profile(const SteeringVectorBank& bank,
                                                                                   const Weights& weights);

inline constexpr double kDefaultScreenTau = 0.5;

struct LayerSelection {
    int layer = 0;
    std::vector<int> excluded;  // ascending
    // Every layer was screened out; layer is the unscreened argmax.
    bool degraded = false;

    friend bool operator==(const LayerSelection&, const LayerSelection&) = default;
};

// Layers with max_embed_cos > tau are excluded; the argmax of the scores
// among the rest wins, ties going to the deeper layer. `max_embed_cos` may
// be empty (no screening) or must match scores in length.
LayerSelection select_layer(std::span<const double> scores, std::span<const double> max_embed_cos, double tau);

struct CategoryProfile {
    BehaviorLabel category;
    std::vector<double> layer_scores;
    int span_count = 0;
    std::vector<LayerSimilarity> similarity;
    LayerSelection selection;

    friend bool operator==(const CategoryProfile&, const CategoryProfile&) = default;
};

struct LayerAttributionProfile {
    int n_layers = 0;
    double tau = kDefaultScreenTau;
    AttributionMetric metric = AttributionMetric::next_token;
    PatchVector vector = PatchVector::raw;
    bool all_span_positions = false;
    std::uint64_t model_fingerprint = 0;
    std::uint64_t corpus_hash = 0;
    std::vector<CategoryProfile> categories;
    // Categories that could not be scored, with reasons.
    std::vector<std::pair<BehaviorLabel, std::string>> skipped;

    const CategoryProfile* find(BehaviorLabel category) const;
    // Throws InvalidArgument naming the category.
    int selected_layer(BehaviorLabel category) const;

    friend bool operator==(const LayerAttributionProfile&, const LayerAttributionProfile&) = default;
};

// Scores every bank category over the corpus, screens and selects.
// Categories without qualifying spans go to `skipped`.
LayerAttributionProfile attribute(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                                  const SteeringVectorBank& bank, double tau = kDefaultScreenTau,
                                  const AttributionOptions& options = {});

std::string profile_to_json(const LayerAttributionProfile& profile);
// Throws FormatError.
LayerAttributionProfile profile_from_json(std::string_view text);
void save_profile(const LayerAttributionProfile& profile, const std::filesystem::path& path);
LayerAttributionProfile load_profile(const std::filesystem::path& path);

}  // namespace steerkit
