#pragma once

// Behavior-annotated reasoning chains.
//
// Markup: ["label"]text["end-section"], one section per behavior span.
// Text outside sections is kept in raw_text but carries no label.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steerkit {

enum class BehaviorLabel {
    initializing,
    deduction,
    adding_knowledge,
    example_testing,
    uncertainty_estimation,
    backtracking,
};

inline constexpr std::size_t kLabelCount = 6;

inline constexpr std::array<BehaviorLabel, kLabelCount> kAllLabels{
    BehaviorLabel::initializing,      BehaviorLabel::deduction,
    BehaviorLabel::adding_knowledge,  BehaviorLabel::example_testing,
    BehaviorLabel::uncertainty_estimation, BehaviorLabel::backtracking,
};

// Behaviors that get steering vectors; initializing and deduction are
// annotated but not steered.
inline constexpr std::array<BehaviorLabel, 4> kSteeredLabels{
    BehaviorLabel::uncertainty_estimation,
    BehaviorLabel::example_testing,
    BehaviorLabel::backtracking,
    BehaviorLabel::adding_knowledge,
};

inline constexpr std::size_t index_of(BehaviorLabel label) { return static_cast<std::size_t>(label); }

// Markup spelling, e.g. "adding-knowledge".
std::string_view to_string(BehaviorLabel label);
std::optional<BehaviorLabel> parse_label(std::string_view name);

struct CharSpan {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive

    std::size_t size() const { return end - begin; }
    friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Segment {
    BehaviorLabel label;
    std::string text;  // == raw_text.substr(span.begin, span.size())
    CharSpan span;

    friend bool operator==(const Segment&, const Segment&) = default;
};

struct ParseWarning {
    enum class Kind { unknown_label, unclosed_section, nested_open, stray_end, empty_section, unmatched_segment };
    Kind kind;
    std::size_t offset = 0;  // byte offset into the parsed input
    std::string message;
};

struct SourceMeta {
    std::string model;
    std::string task_id;
};

struct AnnotatedChain {
    std::string raw_text;
    std::vector<Segment> segments;  // ordered, non-overlapping
    SourceMeta source;
    std::vector<ParseWarning> warnings;
    // Set by the annotator when it gave up on getting clean markup.
    bool degraded = false;
};

// Total: never throws. Malformed regions are reported as warnings and left
// out of `segments`; their text stays in raw_text. Segment spans are trimmed
// of surrounding whitespace.
AnnotatedChain parse_annotated(std::string_view text);

// Inverse of parse_annotated on segment structure: raw_text with markers
// wrapped around each segment.
std::string render_annotated(const AnnotatedChain& chain);

// Checks the AnnotatedChain invariants (ordering, span/text agreement).
bool is_well_formed(const AnnotatedChain& chain);

// [begin, end) byte range of one token in raw_text.
struct TokenOffset {
    std::size_t begin = 0;
    std::size_t end = 0;
};

inline constexpr int kMaxSpanPositions = 10;

struct TokenSpan {
    BehaviorLabel label;
    int segment_index = 0;
    std::optional<int> preceding;  // absolute position of the token before the segment
    std::vector<int> positions;    // ascending, includes `preceding`
    bool truncated = false;
};

struct TokenSpanSet {
    std::vector<TokenSpan> spans;
    bool truncated = false;  // any span truncated
};

// Maps every segment to token positions: the preceding token plus every
// token overlapping the segment, capped at kMaxSpanPositions in total.
// `tokens` must tile raw_text; `position_offset` is added to token indices
// (the number of prompt tokens before the chain). Throws InvalidArgument on
// an offset/text mismatch.
TokenSpanSet align_spans(const AnnotatedChain& chain, std::span<const TokenOffset> tokens, int position_offset = 0);

// Sentence boundaries: '.', '?' or '!' (plus closing quotes/brackets) followed
// by whitespace or end of text, except after a guarded abbreviation; and a
// newline followed by whitespace, an uppercase letter or end of text.
// Returned spans are trimmed and non-empty.
std::vector<CharSpan> split_sentences(std::string_view text);

struct BehaviorStats {
    std::array<double, kLabelCount> sentence_fraction{};
    std::array<double, kLabelCount> token_fraction{};
    int sentence_count = 0;
    int token_count = 0;

    double sentences(BehaviorLabel l) const { return sentence_fraction[index_of(l)]; }
    double tokens(BehaviorLabel l) const { return token_fraction[index_of(l)]; }
};

// A sentence counts toward the label covering >= 50% of its characters (the
// earliest such label on an exact 50/50 split). A token counts toward the
// label of the segment it overlaps most. Token fractions are over all tokens.
BehaviorStats behavior_stats(const AnnotatedChain& chain, std::span<const TokenOffset> tokens);

}  // namespace steerkit
