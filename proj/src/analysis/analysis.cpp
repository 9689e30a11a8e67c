#include "steerkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "../common/json_codec.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"

namespace steerkit {

using detail::ojson;

std::string_view to_string(FractionBasis basis) { return basis == FractionBasis::tokens ? "tokens" : "sentences"; }

FractionBasis parse_fraction_basis(std::string_view name) {
    if (name == "tokens") return FractionBasis::tokens;
    if (name == "sentences") return FractionBasis::sentences;
    throw InvalidArgument("unknown fraction basis \"" + std::string(name) + "\" (expected tokens or sentences)");
}

namespace {

double fraction_of(const SteeringRun& run, BehaviorLabel label, FractionBasis basis) {
    if (!run.stats) throw InvalidArgument("run " + run.run_id() + " has no behavior stats");
    return basis == FractionBasis::tokens ? run.stats->tokens(label) : run.stats->sentences(label);
}

}  // namespace

SteeringEffect steering_effect(std::span<const SteeringRun> runs, BehaviorLabel category, int sign, double alpha,
                               FractionBasis basis) {
    if (sign != 1 && sign != -1) throw InvalidArgument("steering_effect: sign must be +1 or -1");
    std::map<std::string, const SteeringRun*> baselines, steered;
    for (const auto& r : runs) {
        if (r.spec.is_baseline()) {
            baselines.emplace(r.task_id, &r);
        } else if (r.spec.category == category && r.spec.sign == sign && r.spec.alpha == alpha) {
            steered.emplace(r.task_id, &r);
        }
    }
    SteeringEffect e;
    e.category = category;
    e.sign = sign;
    e.alpha = alpha;
    e.basis = basis;
    double total = 0.0;
    for (const auto& [task, run] : steered) {
        const auto b = baselines.find(task);
        if (b == baselines.end()) {
            e.unpaired.push_back(task);
            continue;
        }
        TaskDelta d{task, fraction_of(*b->second, category, basis), fraction_of(*run, category, basis), 0.0};
        d.delta = d.steered - d.baseline;
        total += d.delta;
        e.per_task.push_back(std::move(d));
    }
    for (const auto& [task, _] : baselines) {
        if (!steered.count(task)) e.unpaired.push_back(task);
    }
    std::sort(e.unpaired.begin(), e.unpaired.end());
    e.task_count = static_cast<int>(e.per_task.size());
    if (e.task_count == 0) {
        throw InvalidArgument("no task has both a baseline and a \"" + std::string(to_string(category)) +
                              "\" run with sign " + std::to_string(sign));
    }
    e.delta = total / e.task_count;
    return e;
}

std::vector<SteeringEffect> all_steering_effects(std::span<const SteeringRun> runs, FractionBasis basis) {
    struct Key {
        BehaviorLabel category;
        int sign;
        double alpha;
        bool operator<(const Key& o) const {
            if (category != o.category) return category < o.category;
            if (sign != o.sign) return sign > o.sign;
            return alpha < o.alpha;
        }
    };
    std::set<Key> keys;
    for (const auto& r : runs)
        if (!r.spec.is_baseline()) keys.insert({r.spec.category, r.spec.sign, r.spec.alpha});
    std::vector<SteeringEffect> out;
    for (const auto& k : keys) out.push_back(steering_effect(runs, k.category, k.sign, k.alpha, basis));
    return out;
}

CosineMatrix cosine_matrix(const SteeringVectorBank& bank, std::span<const std::pair<BehaviorLabel, int>> selection) {
    CosineMatrix m;
    std::vector<const SteeringVector*> vs;
    for (const auto& [c, l] : selection) {
        vs.push_back(&bank.at(c, l));
        m.categories.push_back(c);
        m.layers.push_back(l);
    }
    const auto n = vs.size();
    m.values.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double c = i == j ? 1.0 : std::clamp(cosine(vs[i]->raw, vs[j]->raw), -1.0, 1.0);
            m.values[i][j] = c;
            m.values[j][i] = c;
        }
    }
    return m;
}

CosineMatrix cosine_matrix(const SteeringVectorBank& bank, const LayerAttributionProfile& profile) {
    std::vector<std::pair<BehaviorLabel, int>> sel;
    for (const auto& c : profile.categories) sel.emplace_back(c.category, c.selection.layer);
    return cosine_matrix(bank, sel);
}

CorpusSummary summarize_corpus(std::string name, std::span<const AnnotatedChain> chains) {
    if (chains.empty()) throw InvalidArgument("corpus \"" + name + "\" is empty");
    CorpusSummary s;
    s.name = std::move(name);
    s.chain_count = static_cast<int>(chains.size());
    long sentences = 0;
    std::array<double, kLabelCount> hits{};
    for (const auto& chain : chains) {
        const std::vector<TokenOffset> none;
        const auto stats = behavior_stats(chain, none);
        sentences += stats.sentence_count;
        for (std::size_t k = 0; k < kLabelCount; ++k)
            hits[k] += std::round(stats.sentence_fraction[k] * stats.sentence_count);
    }
    s.mean_sentences = static_cast<double>(sentences) / s.chain_count;
    for (std::size_t k = 0; k < kLabelCount; ++k) s.sentence_fraction[k] = sentences ? hits[k] / sentences : 0.0;
    return s;
}

std::vector<CorpusSummary> corpus_comparison(
    std::span<const std::pair<std::string, std::vector<AnnotatedChain>>> corpora) {
    std::vector<CorpusSummary> out;
    for (const auto& [name, chains] : corpora) out.push_back(summarize_corpus(name, chains));
    return out;
}

namespace {
ojson effect_json(const SteeringEffect& e);
}  // namespace

SignCheck sign_check(std::span<const SteeringEffect> effects) {
    struct Seen {
        bool plus = false, minus = false, ok = true;
    };
    std::map<BehaviorLabel, Seen> seen;
    for (const auto& e : effects) {
        auto& s = seen[e.category];
        (e.sign > 0 ? s.plus : s.minus) = true;
        s.ok = s.ok && e.matches_expected_sign();
    }
    SignCheck out;
    for (const auto& [c, s] : seen) {
        const bool pass = s.ok && s.plus && s.minus;
        out.categories.emplace_back(c, pass);
        out.passing += pass;
    }
    out.total = static_cast<int>(seen.size());
    return out;
}

std::string effects_to_json(std::span<const SteeringEffect> effects) {
    ojson j;
    j["schema_version"] = kReportSchemaVersion;
    auto arr = ojson::array();
    for (const auto& e : effects) arr.push_back(effect_json(e));
    j["effects"] = std::move(arr);
    return j.dump(2) + "\n";
}

std::vector<SteeringEffect> effects_from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("schema_version").get<int>() != kReportSchemaVersion) throw FormatError("unsupported effects schema");
        std::vector<SteeringEffect> out;
        for (const auto& ej : j.at("effects")) {
            SteeringEffect e;
            e.category = detail::label_from_json(ej.at("category"));
            e.sign = ej.at("sign").get<int>();
            e.alpha = ej.at("alpha").get<double>();
            try {
                e.basis = parse_fraction_basis(ej.at("basis").get<std::string>());
            } catch (const InvalidArgument& ex) {
                throw FormatError(ex.what());
            }
            e.delta = ej.at("delta").get<double>();
            e.task_count = ej.at("task_count").get<int>();
            e.unpaired = ej.at("unpaired").get<std::vector<std::string>>();
            for (const auto& d : ej.at("per_task")) {
                e.per_task.push_back({d.at("task_id").get<std::string>(), d.at("baseline").get<double>(),
                                      d.at("steered").get<double>(), d.at("delta").get<double>()});
            }
            out.push_back(std::move(e));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("effects file: ") + e.what());
    }
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string coord(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// Diverging scale over [-1, 1]: blue, white, red.
std::string diverging_color(double v) {
    const double t = std::clamp(v, -1.0, 1.0);
    const double lo[3] = {59, 76, 192};
    const double hi[3] = {180, 4, 38};
    const double* end = t < 0 ? lo : hi;
    const double a = std::abs(t);
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(255 + (end[0] - 255) * a)),
                  static_cast<int>(std::lround(255 + (end[1] - 255) * a)),
                  static_cast<int>(std::lround(255 + (end[2] - 255) * a)));
    return buf;
}

constexpr const char* kPalette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};

std::string svg_open(double w, double h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(w) + "\" height=\"" + coord(h) +
           "\" viewBox=\"0 0 " + coord(w) + " " + coord(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string text_at(double x, double y, const std::string& s, const char* anchor = "start") {
    return "<text x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" text-anchor=\"" + anchor + "\">" + s + "</text>\n";
}

std::string cosine_svg(const CosineMatrix& m) {
    const double cell = 48, left = 170, top = 30;
    const auto n = m.categories.size();
    std::string s = svg_open(left + cell * n + 90, top + cell * n + 150);
    s += text_at(left, 18, "cosine similarity (color scale -1 to 1)");
    for (std::size_t i = 0; i < n; ++i) {
        s += text_at(left - 6, top + cell * i + cell / 2 + 4,
                     std::string(to_string(m.categories[i])) + " L" + std::to_string(m.layers[i]), "end");
        const double x = left + cell * i + cell / 2;
        const double y = top + cell * n + 8;
        s += "<text x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" transform=\"rotate(45 " + coord(x) + " " +
             coord(y) + ")\">" + std::string(to_string(m.categories[i])) + "</text>\n";
        for (std::size_t j = 0; j < n; ++j) {
            s += "<rect class=\"cell\" data-row=\"" + std::string(to_string(m.categories[i])) + "\" data-col=\"" +
                 std::string(to_string(m.categories[j])) + "\" x=\"" + coord(left + cell * j) + "\" y=\"" +
                 coord(top + cell * i) + "\" width=\"" + coord(cell) + "\" height=\"" + coord(cell) + "\" fill=\"" +
                 diverging_color(m.values[i][j]) + "\" stroke=\"#888\"/>\n";
            s += text_at(left + cell * j + cell / 2, top + cell * i + cell / 2 + 4, coord(m.values[i][j]), "middle");
        }
    }
    // Legend from -1 to 1.
    const double lx = left + cell * n + 20;
    for (int k = 0; k <= 20; ++k) {
        const double v = 1.0 - k / 10.0;
        s += "<rect class=\"legend\" x=\"" + coord(lx) + "\" y=\"" + coord(top + k * 6.0) +
             "\" width=\"14\" height=\"6\" fill=\"" + diverging_color(v) + "\"/>\n";
    }
    s += text_at(lx + 18, top + 6, "1");
    s += text_at(lx + 18, top + 126, "-1");
    return s + "</svg>\n";
}

// One polyline per series over x = 0..n-1.
std::string curves_svg(const std::string& title, const std::vector<std::string>& names,
                       const std::vector<std::vector<double>>& series, std::optional<double> threshold,
                       const std::vector<std::optional<int>>& marks) {
    const double w = 520, h = 300, left = 50, right = 170, top = 30, bottom = 40;
    double lo = 0.0, hi = 0.0;
    std::size_t n = 0;
    for (const auto& ys : series) {
        n = std::max(n, ys.size());
        for (double y : ys) {
            lo = std::min(lo, y);
            hi = std::max(hi, y);
        }
    }
    if (threshold) hi = std::max(hi, *threshold);
    if (hi <= lo) hi = lo + 1.0;
    const double pw = w - left - right, ph = h - top - bottom;
    auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / (n - 1) : pw / 2); };
    auto py = [&](double y) { return top + ph * (1.0 - (y - lo) / (hi - lo)); };
    std::string s = svg_open(w, h);
    s += text_at(left, 18, title);
    s += "<line x1=\"" + coord(left) + "\" y1=\"" + coord(top + ph) + "\" x2=\"" + coord(left + pw) + "\" y2=\"" +
         coord(top + ph) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + coord(left) + "\" y1=\"" + coord(top) + "\" x2=\"" + coord(left) + "\" y2=\"" +
         coord(top + ph) + "\" stroke=\"black\"/>\n";
    s += text_at(left - 4, top + 4, coord(hi), "end");
    s += text_at(left - 4, top + ph, coord(lo), "end");
    s += text_at(left + pw / 2, h - 8, "layer", "middle");
    for (std::size_t i = 0; i < n; ++i) s += text_at(px(i), top + ph + 14, std::to_string(i), "middle");
    if (threshold) {
        s += "<line class=\"threshold\" x1=\"" + coord(left) + "\" y1=\"" + coord(py(*threshold)) + "\" x2=\"" +
             coord(left + pw) + "\" y2=\"" + coord(py(*threshold)) + "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % std::size(kPalette)];
        std::string pts;
        for (std::size_t i = 0; i < series[k].size(); ++i) {
            if (i) pts += " ";
            pts += coord(px(i)) + "," + coord(py(series[k][i]));
        }
        s += "<polyline class=\"series\" data-name=\"" + names[k] + "\" fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        if (k < marks.size() && marks[k] && static_cast<std::size_t>(*marks[k]) < series[k].size()) {
            const auto i = static_cast<std::size_t>(*marks[k]);
            s += "<circle class=\"selected\" cx=\"" + coord(px(i)) + "\" cy=\"" + coord(py(series[k][i])) +
                 "\" r=\"4\" fill=\"" + color + "\"/>\n";
        }
        s += "<rect x=\"" + coord(w - right + 10) + "\" y=\"" + coord(top + 16.0 * k) +
             "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        s += text_at(w - right + 24, top + 16.0 * k + 9, names[k]);
    }
    return s + "</svg>\n";
}

std::string effects_svg(const std::vector<SteeringEffect>& effects) {
    const double bar = 22, gap = 6, left = 250, w = 560, top = 30;
    const double h = top + (bar + gap) * effects.size() + 30;
    const double mid = left + (w - left - 20) / 2, half = (w - left - 20) / 2;
    double scale = 0.0;
    for (const auto& e : effects) scale = std::max(scale, std::abs(e.delta));
    if (scale == 0.0) scale = 1.0;
    std::string s = svg_open(w, h);
    s += text_at(left, 18, "change in " + std::string(effects.empty() ? "token" : std::string(to_string(effects[0].basis))) +
                               " fraction (steered - baseline)");
    s += "<line x1=\"" + coord(mid) + "\" y1=\"" + coord(top) + "\" x2=\"" + coord(mid) + "\" y2=\"" +
         coord(h - 30) + "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < effects.size(); ++i) {
        const auto& e = effects[i];
        const double y = top + (bar + gap) * i;
        const double len = half * std::abs(e.delta) / scale;
        const double x = e.delta >= 0 ? mid : mid - len;
        s += text_at(left - 6, y + bar / 2 + 4,
                     std::string(to_string(e.category)) + (e.sign > 0 ? " +" : " -") + " a=" + num(e.alpha), "end");
        s += "<rect class=\"bar\" x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" width=\"" + coord(len) +
             "\" height=\"" + coord(bar) + "\" fill=\"" + (e.sign > 0 ? "#b40426" : "#3b4cc0") + "\"/>\n";
        s += text_at(e.delta >= 0 ? x + len + 4 : x - 4, y + bar / 2 + 4, coord(e.delta), e.delta >= 0 ? "start" : "end");
    }
    return s + "</svg>\n";
}

ojson profile_json(const LayerAttributionProfile& p) {
    ojson j;
    j["n_layers"] = p.n_layers;
    j["tau"] = p.tau;
    j["metric"] = to_string(p.metric);
    j["model_fingerprint"] = hex64(p.model_fingerprint);
    j["corpus_hash"] = hex64(p.corpus_hash);
    auto cats = ojson::array();
    for (const auto& c : p.categories) {
        ojson e;
        e["category"] = to_string(c.category);
        e["selected_layer"] = c.selection.layer;
        e["degraded"] = c.selection.degraded;
        e["excluded"] = c.selection.excluded;
        e["span_count"] = c.span_count;
        e["layer_scores"] = c.layer_scores;
        std::vector<double> embed, unembed;
        for (const auto& s : c.similarity) {
            embed.push_back(s.max_embed_cos);
            unembed.push_back(s.max_unembed_cos);
        }
        e["max_embed_cos"] = embed;
        e["max_unembed_cos"] = unembed;
        cats.push_back(std::move(e));
    }
    j["categories"] = std::move(cats);
    return j;
}

ojson effect_json(const SteeringEffect& e) {
    ojson j;
    j["category"] = to_string(e.category);
    j["sign"] = e.sign;
    j["alpha"] = e.alpha;
    j["basis"] = to_string(e.basis);
    j["delta"] = e.delta;
    j["task_count"] = e.task_count;
    j["matches_expected_sign"] = e.matches_expected_sign();
    j["unpaired"] = e.unpaired;
    auto per = ojson::array();
    for (const auto& d : e.per_task) {
        per.push_back({{"task_id", d.task_id}, {"baseline", d.baseline}, {"steered", d.steered}, {"delta", d.delta}});
    }
    j["per_task"] = std::move(per);
    return j;
}

ojson sign_check_json(std::span<const SteeringEffect> effects) {
    const auto check = sign_check(effects);
    ojson j;
    auto cats = ojson::array();
    for (const auto& [c, pass] : check.categories) cats.push_back({{"category", to_string(c)}, {"pass", pass}});
    j["categories"] = std::move(cats);
    j["passing"] = check.passing;
    j["total"] = check.total;
    return j;
}

}  // namespace

std::vector<std::string> emit_report(const ReportInputs& inputs, const std::filesystem::path& dir) {
    std::map<std::string, std::string> files;  // relative path -> content
    ojson report;
    report["schema_version"] = kReportSchemaVersion;

    if (const auto* p = inputs.profile) {
        report["attribution"] = profile_json(*p);
        std::string csv = "layer";
        for (const auto& c : p->categories) csv += "," + std::string(to_string(c.category));
        csv += "\n";
        for (int l = 0; l < p->n_layers; ++l) {
            csv += std::to_string(l);
            for (const auto& c : p->categories) csv += "," + num(c.layer_scores[static_cast<std::size_t>(l)]);
            csv += "\n";
        }
        files["tables/layer_scores.csv"] = csv;

        std::string sim = "category,layer,max_embed_cos,max_unembed_cos,embed_argmax,unembed_argmax,excluded\n";
        std::string sel = "category,selected_layer,degraded,span_count,excluded_layers\n";
        std::vector<std::string> names;
        std::vector<std::vector<double>> scores, embeds;
        std::vector<std::optional<int>> marks;
        for (const auto& c : p->categories) {
            for (std::size_t l = 0; l < c.similarity.size(); ++l) {
                const auto& s = c.similarity[l];
                const bool ex = std::binary_search(c.selection.excluded.begin(), c.selection.excluded.end(),
                                                   static_cast<int>(l));
                sim += std::string(to_string(c.category)) + "," + std::to_string(l) + "," + num(s.max_embed_cos) +
                       "," + num(s.max_unembed_cos) + "," + std::to_string(s.embed_argmax) + "," +
                       std::to_string(s.unembed_argmax) + "," + (ex ? "1" : "0") + "\n";
            }
            std::string excluded;
            for (int l : c.selection.excluded) excluded += (excluded.empty() ? "" : " ") + std::to_string(l);
            sel += std::string(to_string(c.category)) + "," + std::to_string(c.selection.layer) + "," +
                   (c.selection.degraded ? "1" : "0") + "," + std::to_string(c.span_count) + "," + excluded + "\n";
            names.emplace_back(to_string(c.category));
            scores.push_back(c.layer_scores);
            std::vector<double> e;
            for (const auto& s : c.similarity) e.push_back(s.max_embed_cos);
            embeds.push_back(std::move(e));
            marks.push_back(c.selection.layer);
        }
        files["tables/similarity.csv"] = sim;
        files["tables/selection.csv"] = sel;
        files["figures/layer_scores.svg"] = curves_svg("mean |attribution| per layer", names, scores, std::nullopt, marks);
        files["figures/embedding_similarity.svg"] =
            curves_svg("max cosine with token embeddings (dashed: tau)", names, embeds, p->tau, {});
    }

    if (inputs.cosines) {
        const auto& m = *inputs.cosines;
        ojson cj;
        std::vector<std::string> cats;
        for (auto c : m.categories) cats.emplace_back(to_string(c));
        cj["categories"] = cats;
        cj["layers"] = m.layers;
        cj["values"] = m.values;
        report["cosine_matrix"] = std::move(cj);
        std::string csv = "category";
        for (const auto& c : cats) csv += "," + c;
        csv += "\n";
        for (std::size_t i = 0; i < cats.size(); ++i) {
            csv += cats[i];
            for (double v : m.values[i]) csv += "," + num(v);
            csv += "\n";
        }
        files["tables/cosine_matrix.csv"] = csv;
        files["figures/cosine_matrix.svg"] = cosine_svg(m);
    }

    if (!inputs.effects.empty()) {
        auto arr = ojson::array();
        std::string csv = "category,sign,alpha,basis,delta,task_count,matches_expected_sign\n";
        for (const auto& e : inputs.effects) {
            arr.push_back(effect_json(e));
            csv += std::string(to_string(e.category)) + "," + std::to_string(e.sign) + "," + num(e.alpha) + "," +
                   std::string(to_string(e.basis)) + "," + num(e.delta) + "," + std::to_string(e.task_count) + "," +
                   (e.matches_expected_sign() ? "1" : "0") + "\n";
        }
        report["steering_effects"] = std::move(arr);
        report["sign_check"] = sign_check_json(inputs.effects);
        files["tables/steering_effects.csv"] = csv;
        files["figures/steering_effects.svg"] = effects_svg(inputs.effects);
    }

    if (!inputs.corpora.empty()) {
        auto arr = ojson::array();
        std::string csv = "corpus,chains,mean_sentences";
        for (auto l : kAllLabels) csv += "," + std::string(to_string(l));
        csv += "\n";
        for (const auto& c : inputs.corpora) {
            ojson j;
            j["name"] = c.name;
            j["chain_count"] = c.chain_count;
            j["mean_sentences"] = c.mean_sentences;
            ojson f = ojson::object();
            for (auto l : kAllLabels) f[std::string(to_string(l))] = c.sentence_fraction[index_of(l)];
            j["sentence_fraction"] = std::move(f);
            arr.push_back(std::move(j));
            csv += c.name + "," + std::to_string(c.chain_count) + "," + num(c.mean_sentences);
            for (auto l : kAllLabels) csv += "," + num(c.sentence_fraction[index_of(l)]);
            csv += "\n";
        }
        report["corpora"] = std::move(arr);
        files["tables/corpus_comparison.csv"] = csv;
    }

    files["report.json"] = report.dump(2) + "\n";
    std::vector<std::string> written;
    for (const auto& [rel, content] : files) {
        write_file_atomic(dir / rel, content);
        written.push_back(rel);
    }
    return written;
}

}  // namespace steerkit
