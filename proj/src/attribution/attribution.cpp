#include "steerkit/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"
#include "steerkit/metrics.hpp"
#include "steerkit/simd/kernels.hpp"

namespace steerkit {

std::string_view to_string(AttributionMetric metric) {
    return metric == AttributionMetric::next_token ? "next_token" : "clean_prediction";
}

AttributionMetric parse_attribution_metric(std::string_view name) {
    if (name == "next_token") return AttributionMetric::next_token;
    if (name == "clean_prediction") return AttributionMetric::clean_prediction;
    throw InvalidArgument("unknown attribution metric \"" + std::string(name) +
                          "\" (expected next_token or clean_prediction)");
}

namespace {

std::string_view to_string(PatchVector v) { return v == PatchVector::raw ? "raw" : "normalized"; }

PatchVector parse_patch_vector(std::string_view name) {
    if (name == "raw") return PatchVector::raw;
    if (name == "normalized") return PatchVector::normalized;
    throw FormatError("unknown patch vector \"" + std::string(name) + "\"");
}

void check_position(std::span<const Token> tokens, int position, AttributionMetric metric) {
    const int n = static_cast<int>(tokens.size());
    const int limit = metric == AttributionMetric::next_token ? n - 1 : n;
    if (position < 0 || position >= limit) {
        throw InvalidArgument("patch position " + std::to_string(position) + " out of range [0, " +
                              std::to_string(limit) + ")" +
                              (metric == AttributionMetric::next_token ? " (the next_token metric needs a successor)"
                                                                       : ""));
    }
}

void check_patch(const Weights& weights, std::span<const double> u, int layer) {
    if (layer < 0 || layer >= weights.config.n_layers) {
        throw InvalidArgument("patch layer " + std::to_string(layer) + " out of range [0, " +
                              std::to_string(weights.config.n_layers) + ")");
    }
    if (static_cast<int>(u.size()) != weights.config.d_model) {
        throw InvalidArgument("patch vector has dimension " + std::to_string(u.size()) + ", model has d_model " +
                              std::to_string(weights.config.d_model));
    }
}

// The metric sees only tokens[0..position]; later tokens cannot influence it.
std::span<const Token> prefix(std::span<const Token> tokens, int position) {
    return tokens.first(static_cast<std::size_t>(position) + 1);
}

double metric_value(const LogitMetric& metric, std::span<const double> logits) {
    std::vector<double> scratch(logits.size());
    return metric.evaluate(logits, scratch);
}

std::span<const double> patch_of(const SteeringVector& v, PatchVector which) {
    return which == PatchVector::raw ? std::span<const double>(v.raw) : std::span<const double>(v.normalized);
}

}  // namespace

LogitMetric patching_metric(const Weights& weights, std::span<const Token> tokens, int position,
                            AttributionMetric metric) {
    check_position(tokens, position, metric);
    std::vector<double> reference(static_cast<std::size_t>(weights.config.vocab_size), 0.0);
    if (metric == AttributionMetric::next_token) {
        const Token next = tokens[static_cast<std::size_t>(position) + 1];
        if (next < 0 || next >= weights.config.vocab_size) {
            throw TokenOutOfVocabulary("token " + std::to_string(next) + " outside the vocabulary");
        }
        reference[static_cast<std::size_t>(next)] = 1.0;
    } else {
        const auto clean = forward(weights, prefix(tokens, position));
        reference = softmax(clean.logits.row(static_cast<std::size_t>(position)));
    }
    return kl_metric(std::move(reference), position);
}

double attribution_effect(const Weights& weights, std::span<const Token> tokens, std::span<const double> u, int layer,
                          int position, AttributionMetric metric) {
    check_patch(weights, u, layer);
    const auto m = patching_metric(weights, tokens, position, metric);
    const auto g = grad_wrt_activation(weights, prefix(tokens, position), layer, position, m);
    return simd::dot(u, g);
}

double exact_patching_effect(const Weights& weights, std::span<const Token> tokens, std::span<const double> u,
                             int layer, int position, AttributionMetric metric) {
    check_patch(weights, u, layer);
    const auto m = patching_metric(weights, tokens, position, metric);
    const auto head = prefix(tokens, position);
    const auto clean = forward(weights, head);
    const Intervention patch{layer, {u.begin(), u.end()}, 1.0, PositionFilter::at({position})};
    const auto patched = forward(weights, head, std::span<const Intervention>(&patch, 1));
    const auto row = static_cast<std::size_t>(position);
    return metric_value(m, patched.logits.row(row)) - metric_value(m, clean.logits.row(row));
}

std::vector<int> qualifying_positions(const TokenSpanSet& spans, int seq_len, BehaviorLabel category,
                                      const AttributionOptions& options) {
    const int limit = options.metric == AttributionMetric::next_token ? seq_len - 1 : seq_len;
    std::vector<int> out;
    for (const auto& s : spans.spans) {
        if (s.label != category) continue;
        if (options.all_span_positions) {
            for (int p : s.positions)
                if (p >= 0 && p < limit) out.push_back(p);
        } else if (s.preceding && *s.preceding < limit) {
            out.push_back(*s.preceding);
        }
    }
    return out;
}

namespace {

void check_qualifies(const AnnotatedPrompt& prompt, const SteeringVector& v, int position,
                     const AttributionOptions& options) {
    const auto spans = spans_for(prompt);
    const auto q = qualifying_positions(spans, static_cast<int>(prompt.tokens.size()), v.category, options);
    if (std::find(q.begin(), q.end(), position) == q.end()) {
        throw InvalidArgument("position " + std::to_string(position) + " of prompt '" + prompt.id +
                              "' is not a qualifying position of a \"" + std::string(to_string(v.category)) +
                              "\" span");
    }
}

}  // namespace

double attribution_effect(const Weights& weights, const AnnotatedPrompt& prompt, const SteeringVector& v,
                          int position, const AttributionOptions& options) {
    check_qualifies(prompt, v, position, options);
    return attribution_effect(weights, prompt.tokens, patch_of(v, options.vector), v.layer, position,
                              options.metric);
}

double exact_patching_effect(const Weights& weights, const AnnotatedPrompt& prompt, const SteeringVector& v,
                             int position, const AttributionOptions& options) {
    check_qualifies(prompt, v, position, options);
    return exact_patching_effect(weights, prompt.tokens, patch_of(v, options.vector), v.layer, position,
                                 options.metric);
}

std::vector<PatchingEffect> patching_effects(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                                             const SteeringVectorBank& bank,
                                             std::span<const BehaviorLabel> categories,
                                             const AttributionOptions& options, bool with_exact) {
    const int n_layers = weights.config.n_layers;
    if (bank.d_model() != weights.config.d_model || bank.n_layers() != n_layers) {
        throw InvalidArgument("bank shape (" + std::to_string(bank.n_layers()) + " layers, d_model " +
                              std::to_string(bank.d_model()) + ") does not match the model");
    }
    for (auto c : categories) {
        for (int l = 0; l < n_layers; ++l) (void)bank.at(c, l);
    }

    std::vector<PatchingEffect> out;
    for (const auto& prompt : corpus) {
        const auto spans = spans_for(prompt);
        const int seq = static_cast<int>(prompt.tokens.size());
        struct Cached {
            ResidualGradients grads;
            double clean_value = 0.0;
        };
        std::map<int, Cached> by_position;
        auto gradients_at = [&](int p) -> const Cached& {
            auto it = by_position.find(p);
            if (it != by_position.end()) return it->second;
            const auto m = patching_metric(weights, prompt.tokens, p, options.metric);
            Cached c;
            c.grads = residual_gradients(weights, prefix(prompt.tokens, p), m);
            c.clean_value = c.grads.metric_value;
            return by_position.emplace(p, std::move(c)).first->second;
        };
        for (auto category : categories) {
            for (int p : qualifying_positions(spans, seq, category, options)) {
                const auto& cached = gradients_at(p);
                for (int l = 0; l < n_layers; ++l) {
                    const auto u = patch_of(bank.at(category, l), options.vector);
                    PatchingEffect e{prompt.id, category, l, p, simd::dot(u, cached.grads.at(l, p)), std::nullopt,
                                     cached.clean_value};
                    if (with_exact) {
                        e.delta_exact = exact_patching_effect(weights, prompt.tokens, u, l, p, options.metric);
                    }
                    out.push_back(std::move(e));
                }
            }
        }
    }
    return out;
}

CategoryScores aggregate_layer_scores(std::span<const PatchingEffect> effects, BehaviorLabel category, int n_layers) {
    CategoryScores s;
    s.layer_scores.assign(static_cast<std::size_t>(n_layers), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(n_layers), 0);
    for (const auto& e : effects) {
        if (e.category != category) continue;
        if (e.layer < 0 || e.layer >= n_layers) throw InvalidArgument("effect layer out of range");
        s.layer_scores[static_cast<std::size_t>(e.layer)] += std::abs(e.delta_attr);
        ++counts[static_cast<std::size_t>(e.layer)];
    }
    if (counts.empty() || counts[0] == 0) {
        throw InvalidArgument("no qualifying \"" + std::string(to_string(category)) + "\" spans in the corpus");
    }
    for (std::size_t l = 0; l < counts.size(); ++l) {
        if (counts[l] != counts[0]) throw InvalidArgument("effects cover the layers unevenly");
        s.layer_scores[l] /= counts[l];
    }
    s.span_count = counts[0];
    return s;
}

CategoryScores aggregate_layer_scores(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                                      const SteeringVectorBank& bank, BehaviorLabel category,
                                      const AttributionOptions& options) {
    const BehaviorLabel one[] = {category};
    const auto effects = patching_effects(weights, corpus, bank, one, options);
    return aggregate_layer_scores(effects, category, weights.config.n_layers);
}

LayerSimilarity vector_similarity(std::span<const double> u, const Weights& weights) {
    if (static_cast<int>(u.size()) != weights.config.d_model) {
        throw InvalidArgument("vector dimension " + std::to_string(u.size()) + " does not match d_model " +
                              std::to_string(weights.config.d_model));
    }
    LayerSimilarity s;
    auto scan = [&](const Matrix& m, double& best, int& arg) {
        best = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const double c = cosine(u, m.row(r));
            if (c > best) {
                best = c;
                arg = static_cast<int>(r);
            }
        }
    };
    scan(weights.token_embedding, s.max_embed_cos, s.embed_argmax);
    scan(weights.unembedding, s.max_unembed_cos, s.unembed_argmax);
    return s;
}

std::map<BehaviorLabel, std::vector<LayerSimilarity>> embedding_similarity_profile(const SteeringVectorBank& bank,
                                                                                   const Weights& weights) {
    if (bank.d_model() != weights.config.d_model) {
        throw InvalidArgument("bank d_model " + std::to_string(bank.d_model()) + " does not match the model's " +
                              std::to_string(weights.config.d_model));
    }
    std::map<BehaviorLabel, std::vector<LayerSimilarity>> out;
    for (const auto& [key, v] : bank.entries()) {
        auto& layers = out[key.first];
        layers.resize(static_cast<std::size_t>(bank.n_layers()));
        layers[static_cast<std::size_t>(key.second)] = vector_similarity(v.raw, weights);
    }
    return out;
}

LayerSelection select_layer(std::span<const double> scores, std::span<const double> max_embed_cos, double tau) {
    if (scores.empty()) throw InvalidArgument("select_layer: no layer scores");
    if (!max_embed_cos.empty() && max_embed_cos.size() != scores.size()) {
        throw InvalidArgument("select_layer: " + std::to_string(scores.size()) + " scores but " +
                              std::to_string(max_embed_cos.size()) + " similarity entries");
    }
    if (!all_finite(scores)) throw NonFiniteValue("select_layer: non-finite layer score");
    LayerSelection sel;
    for (std::size_t l = 0; l < max_embed_cos.size(); ++l) {
        if (max_embed_cos[l] > tau) sel.excluded.push_back(static_cast<int>(l));
    }
    auto excluded = [&](std::size_t l) {
        return std::binary_search(sel.excluded.begin(), sel.excluded.end(), static_cast<int>(l));
    };
    sel.degraded = sel.excluded.size() == scores.size();
    std::optional<std::size_t> best;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        if (!sel.degraded && excluded(l)) continue;
        if (!best || scores[l] >= scores[*best]) best = l;
    }
    sel.layer = static_cast<int>(*best);
    return sel;
}

const CategoryProfile* LayerAttributionProfile::find(BehaviorLabel category) const {
    for (const auto& c : categories)
        if (c.category == category) return &c;
    return nullptr;
}

int LayerAttributionProfile::selected_layer(BehaviorLabel category) const {
    if (const auto* c = find(category)) return c->selection.layer;
    throw InvalidArgument("profile has no selection for \"" + std::string(to_string(category)) + "\"");
}

LayerAttributionProfile attribute(const Weights& weights, std::span<const AnnotatedPrompt> corpus,
                                  const SteeringVectorBank& bank, double tau, const AttributionOptions& options) {
    LayerAttributionProfile profile;
    profile.n_layers = weights.config.n_layers;
    profile.tau = tau;
    profile.metric = options.metric;
    profile.vector = options.vector;
    profile.all_span_positions = options.all_span_positions;
    profile.model_fingerprint = bank.model_fingerprint();
    profile.corpus_hash = corpus_hash(corpus);

    std::vector<BehaviorLabel> scored;
    for (auto c : bank.categories()) {
        bool complete = true;
        for (int l = 0; l < profile.n_layers; ++l) complete = complete && bank.find(c, l) != nullptr;
        if (complete) {
            scored.push_back(c);
        } else {
            profile.skipped.emplace_back(c, "bank lacks a vector at some layer");
        }
    }
    const auto effects = patching_effects(weights, corpus, bank, scored, options);
    const auto similarity = embedding_similarity_profile(bank, weights);
    for (auto c : scored) {
        CategoryScores scores;
        try {
            scores = aggregate_layer_scores(effects, c, profile.n_layers);
        } catch (const InvalidArgument&) {
            profile.skipped.emplace_back(c, "no qualifying spans in the corpus");
            continue;
        }
        CategoryProfile cp{c, scores.layer_scores, scores.span_count, similarity.at(c), {}};
        std::vector<double> embed;
        for (const auto& s : cp.similarity) embed.push_back(s.max_embed_cos);
        cp.selection = select_layer(cp.layer_scores, embed, tau);
        profile.categories.push_back(std::move(cp));
    }
    return profile;
}

std::string profile_to_json(const LayerAttributionProfile& profile) {
    nlohmann::ordered_json j;
    j["n_layers"] = profile.n_layers;
    j["tau"] = profile.tau;
    j["metric"] = to_string(profile.metric);
    j["vector"] = to_string(profile.vector);
    j["all_span_positions"] = profile.all_span_positions;
    j["model_fingerprint"] = hex64(profile.model_fingerprint);
    j["corpus_hash"] = hex64(profile.corpus_hash);
    auto cats = nlohmann::ordered_json::array();
    for (const auto& c : profile.categories) {
        nlohmann::ordered_json e;
        e["category"] = to_string(c.category);
        e["selected_layer"] = c.selection.layer;
        e["degraded"] = c.selection.degraded;
        e["excluded"] = c.selection.excluded;
        e["span_count"] = c.span_count;
        e["layer_scores"] = c.layer_scores;
        auto sims = nlohmann::ordered_json::array();
        for (const auto& s : c.similarity) {
            sims.push_back({{"max_embed_cos", s.max_embed_cos},
                            {"max_unembed_cos", s.max_unembed_cos},
                            {"embed_argmax", s.embed_argmax},
                            {"unembed_argmax", s.unembed_argmax}});
        }
        e["similarity"] = std::move(sims);
        cats.push_back(std::move(e));
    }
    j["categories"] = std::move(cats);
    auto skipped = nlohmann::ordered_json::array();
    for (const auto& [c, reason] : profile.skipped) {
        skipped.push_back({{"category", to_string(c)}, {"reason", reason}});
    }
    j["skipped"] = std::move(skipped);
    return j.dump(2) + "\n";
}

LayerAttributionProfile profile_from_json(std::string_view text) {
    auto label = [](const nlohmann::json& v) {
        const auto name = v.get<std::string>();
        const auto l = parse_label(name);
        if (!l) throw FormatError("profile: unknown category \"" + name + "\"");
        return *l;
    };
    try {
        const auto j = nlohmann::json::parse(text);
        LayerAttributionProfile p;
        p.n_layers = j.at("n_layers").get<int>();
        p.tau = j.at("tau").get<double>();
        try {
            p.metric = parse_attribution_metric(j.at("metric").get<std::string>());
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("profile: ") + e.what());
        }
        p.vector = parse_patch_vector(j.at("vector").get<std::string>());
        p.all_span_positions = j.at("all_span_positions").get<bool>();
        p.model_fingerprint = parse_hex64(j.at("model_fingerprint").get<std::string>());
        p.corpus_hash = parse_hex64(j.at("corpus_hash").get<std::string>());
        for (const auto& e : j.at("categories")) {
            CategoryProfile c;
            c.category = label(e.at("category"));
            c.selection.layer = e.at("selected_layer").get<int>();
            c.selection.degraded = e.at("degraded").get<bool>();
            c.selection.excluded = e.at("excluded").get<std::vector<int>>();
            c.span_count = e.at("span_count").get<int>();
            c.layer_scores = e.at("layer_scores").get<std::vector<double>>();
            for (const auto& s : e.at("similarity")) {
                c.similarity.push_back({s.at("max_embed_cos").get<double>(), s.at("max_unembed_cos").get<double>(),
                                        s.at("embed_argmax").get<int>(), s.at("unembed_argmax").get<int>()});
            }
            if (static_cast<int>(c.layer_scores.size()) != p.n_layers || c.selection.layer < 0 ||
                c.selection.layer >= p.n_layers) {
                throw FormatError("profile: \"" + std::string(to_string(c.category)) +
                                  "\" entry is inconsistent with n_layers");
            }
            p.categories.push_back(std::move(c));
        }
        for (const auto& e : j.at("skipped")) {
            p.skipped.emplace_back(label(e.at("category")), e.at("reason").get<std::string>());
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("profile: ") + e.what());
    }
}

void save_profile(const LayerAttributionProfile& profile, const std::filesystem::path& path) {
    write_file_atomic(path, profile_to_json(profile));
}

LayerAttributionProfile load_profile(const std::filesystem::path& path) {
    return profile_from_json(read_file_text(path));
}

}  // namespace steerkit
