#include "steerkit/annotations.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>

#include "steerkit/errors.hpp"

namespace steerkit {

namespace {

constexpr std::array<std::string_view, kLabelCount> kLabelNames{
    "initializing", "deduction", "adding-knowledge", "example-testing", "uncertainty-estimation", "backtracking",
};

constexpr std::string_view kEndSection = "end-section";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_marker_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '-' || c == '_';
}

// Recognizes ["name"] at text[pos]; returns the name and marker length.
std::optional<std::pair<std::string_view, std::size_t>> marker_at(std::string_view text, std::size_t pos) {
    if (text.compare(pos, 2, "[\"") != 0) return std::nullopt;
    std::size_t i = pos + 2;
    while (i < text.size() && is_marker_char(text[i])) ++i;
    if (i == pos + 2 || text.compare(i, 2, "\"]") != 0) return std::nullopt;
    return std::make_pair(text.substr(pos + 2, i - pos - 2), i + 2 - pos);
}

CharSpan trim(std::string_view text, CharSpan span) {
    while (span.begin < span.end && is_space(text[span.begin])) ++span.begin;
    while (span.end > span.begin && is_space(text[span.end - 1])) --span.end;
    return span;
}

}  // namespace

std::string_view to_string(BehaviorLabel label) { return kLabelNames[index_of(label)]; }

std::optional<BehaviorLabel> parse_label(std::string_view name) {
    for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
        if (kLabelNames[i] == name) return kAllLabels[i];
    }
    return std::nullopt;
}

AnnotatedChain parse_annotated(std::string_view text) {
    AnnotatedChain chain;
    chain.raw_text.reserve(text.size());

    struct Open {
        std::optional<BehaviorLabel> label;  // nullopt: unknown label, dropped on close
        std::size_t raw_start = 0;
        std::size_t input_offset = 0;
    };
    Open open;
    bool is_open = false;

    auto warn = [&](ParseWarning::Kind kind, std::size_t offset, std::string message) {
        chain.warnings.push_back({kind, offset, std::move(message)});
    };
    auto close = [&]() {
        if (open.label) {
            const CharSpan span = trim(chain.raw_text, {open.raw_start, chain.raw_text.size()});
            if (span.size() == 0) {
                warn(ParseWarning::Kind::empty_section, open.input_offset,
                     "empty \"" + std::string(to_string(*open.label)) + "\" section ignored");
            } else {
                chain.segments.push_back({*open.label, chain.raw_text.substr(span.begin, span.size()), span});
            }
        }
        is_open = false;
    };

    std::size_t i = 0;
    while (i < text.size()) {
        const auto marker = marker_at(text, i);
        if (!marker) {
            chain.raw_text.push_back(text[i]);
            ++i;
            continue;
        }
        const auto [name, length] = *marker;
        if (name == kEndSection) {
            if (is_open) {
                close();
            } else {
                warn(ParseWarning::Kind::stray_end, i, "end-section without an open section");
            }
        } else {
            if (is_open) {
                warn(ParseWarning::Kind::nested_open, open.input_offset,
                     "section opened at offset " + std::to_string(open.input_offset) +
                         " was never closed before the next label; discarded");
            }
            const auto label = parse_label(name);
            if (!label) {
                warn(ParseWarning::Kind::unknown_label, i, "unknown label \"" + std::string(name) + "\"");
            }
            open = Open{label, chain.raw_text.size(), i};
            is_open = true;
        }
        i += length;
    }
    if (is_open) {
        warn(ParseWarning::Kind::unclosed_section, open.input_offset,
             "section opened at offset " + std::to_string(open.input_offset) + " is never closed; discarded");
    }
    return chain;
}

std::string render_annotated(const AnnotatedChain& chain) {
    std::string out;
    out.reserve(chain.raw_text.size() + chain.segments.size() * 40);
    std::size_t cursor = 0;
    for (const auto& seg : chain.segments) {
        out.append(chain.raw_text, cursor, seg.span.begin - cursor);
        out += "[\"";
        out += to_string(seg.label);
        out += "\"]";
        out.append(chain.raw_text, seg.span.begin, seg.span.size());
        out += "[\"end-section\"]";
        cursor = seg.span.end;
    }
    out.append(chain.raw_text, cursor, std::string::npos);
    return out;
}

bool is_well_formed(const AnnotatedChain& chain) {
    std::size_t prev_end = 0;
    for (const auto& seg : chain.segments) {
        if (seg.span.begin < prev_end || seg.span.end < seg.span.begin || seg.span.end > chain.raw_text.size()) {
            return false;
        }
        if (chain.raw_text.compare(seg.span.begin, seg.span.size(), seg.text) != 0) return false;
        prev_end = seg.span.end;
    }
    return true;
}

TokenSpanSet align_spans(const AnnotatedChain& chain, std::span<const TokenOffset> tokens, int position_offset) {
    std::size_t expect = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].begin != expect || tokens[i].end <= tokens[i].begin) {
            throw InvalidArgument("token offsets do not tile the chain text at token " + std::to_string(i));
        }
        expect = tokens[i].end;
    }
    if (expect != chain.raw_text.size()) {
        throw InvalidArgument("token offsets cover " + std::to_string(expect) + " bytes but the chain text has " +
                              std::to_string(chain.raw_text.size()));
    }

    TokenSpanSet out;
    for (std::size_t s = 0; s < chain.segments.size(); ++s) {
        const auto& seg = chain.segments[s];
        // First token ending after the segment start, last token starting before its end.
        const auto first = std::partition_point(tokens.begin(), tokens.end(),
                                                [&](const TokenOffset& t) { return t.end <= seg.span.begin; });
        const auto last = std::partition_point(tokens.begin(), tokens.end(),
                                               [&](const TokenOffset& t) { return t.begin < seg.span.end; });
        if (first >= last) continue;
        const int i0 = static_cast<int>(first - tokens.begin()) + position_offset;
        const int i1 = static_cast<int>(last - tokens.begin()) + position_offset;  // exclusive

        TokenSpan span{seg.label, static_cast<int>(s), std::nullopt, {}, false};
        if (i0 > 0) {
            span.preceding = i0 - 1;
            span.positions.push_back(i0 - 1);
        }
        for (int p = i0; p < i1; ++p) {
            if (static_cast<int>(span.positions.size()) == kMaxSpanPositions) {
                span.truncated = true;
                break;
            }
            span.positions.push_back(p);
        }
        out.truncated = out.truncated || span.truncated;
        out.spans.push_back(std::move(span));
    }
    return out;
}

namespace {

constexpr std::array<std::string_view, 13> kAbbreviations{
    "e.g", "i.e", "etc", "vs", "mr", "mrs", "ms", "dr", "st", "fig", "cf", "approx", "eq",
};

bool is_abbreviation(std::string_view text, std::size_t dot) {
    std::size_t b = dot;
    while (b > 0 && (std::isalpha(static_cast<unsigned char>(text[b - 1])) || text[b - 1] == '.')) --b;
    std::string word{text.substr(b, dot - b)};
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
    return std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
}

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']' || c == '*'; }

}  // namespace

std::vector<CharSpan> split_sentences(std::string_view text) {
    std::vector<CharSpan> out;
    auto emit = [&](std::size_t b, std::size_t e) {
        const CharSpan s = trim(text, {b, e});
        if (s.size() > 0) out.push_back(s);
    };
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c == '.' || c == '?' || c == '!') {
            std::size_t j = i + 1;
            while (j < text.size() && (text[j] == '.' || text[j] == '?' || text[j] == '!')) ++j;
            while (j < text.size() && is_closer(text[j])) ++j;
            const bool boundary = j == text.size() || is_space(text[j]);
            if (boundary && !(c == '.' && j == i + 1 && is_abbreviation(text, i))) {
                emit(start, j);
                start = j;
                i = j;
                continue;
            }
            i = j;
            continue;
        }
        if (c == '\n') {
            const bool boundary = i + 1 == text.size() || is_space(text[i + 1]) ||
                                  std::isupper(static_cast<unsigned char>(text[i + 1]));
            if (boundary) {
                emit(start, i);
                start = i + 1;
            }
        }
        ++i;
    }
    emit(start, text.size());
    return out;
}

BehaviorStats behavior_stats(const AnnotatedChain& chain, std::span<const TokenOffset> tokens) {
    BehaviorStats stats;

    auto overlap = [](CharSpan a, CharSpan b) -> std::size_t {
        const auto lo = std::max(a.begin, b.begin);
        const auto hi = std::min(a.end, b.end);
        return hi > lo ? hi - lo : 0;
    };

    // Per label, characters covered inside `range`; earliest-starting label wins ties.
    auto dominant = [&](CharSpan range, double threshold_fraction) -> std::optional<BehaviorLabel> {
        std::array<std::size_t, kLabelCount> cover{};
        std::array<std::size_t, kLabelCount> first_seen;
        first_seen.fill(SIZE_MAX);
        for (const auto& seg : chain.segments) {
            const auto o = overlap(range, seg.span);
            if (o == 0) continue;
            cover[index_of(seg.label)] += o;
            first_seen[index_of(seg.label)] = std::min(first_seen[index_of(seg.label)], seg.span.begin);
        }
        std::optional<BehaviorLabel> best;
        for (auto label : kAllLabels) {
            const auto k = index_of(label);
            if (cover[k] == 0) continue;
            if (static_cast<double>(cover[k]) < threshold_fraction * static_cast<double>(range.size())) continue;
            if (!best || cover[k] > cover[index_of(*best)] ||
                (cover[k] == cover[index_of(*best)] && first_seen[k] < first_seen[index_of(*best)])) {
                best = label;
            }
        }
        return best;
    };

    const auto sentences = split_sentences(chain.raw_text);
    stats.sentence_count = static_cast<int>(sentences.size());
    std::array<int, kLabelCount> sentence_hits{};
    for (const auto& s : sentences) {
        if (const auto label = dominant(s, 0.5)) ++sentence_hits[index_of(*label)];
    }
    stats.token_count = static_cast<int>(tokens.size());
    std::array<int, kLabelCount> token_hits{};
    for (const auto& t : tokens) {
        if (t.end <= t.begin) continue;
        if (const auto label = dominant({t.begin, t.end}, 0.0)) ++token_hits[index_of(*label)];
    }
    for (std::size_t k = 0; k < kLabelCount; ++k) {
        stats.sentence_fraction[k] =
            stats.sentence_count ? static_cast<double>(sentence_hits[k]) / stats.sentence_count : 0.0;
        stats.token_fraction[k] = stats.token_count ? static_cast<double>(token_hits[k]) / stats.token_count : 0.0;
    }
    return stats;
}

}  // namespace steerkit
