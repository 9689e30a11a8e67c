#include <map>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "steerkit/annotations.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/tokenizer.hpp"
#include "support/fixtures.hpp"

using namespace steerkit;
using namespace steerkit::testing;

namespace {

std::map<BehaviorLabel, int> label_counts(const AnnotatedChain& c) {
    std::map<BehaviorLabel, int> m;
    for (const auto& s : c.segments) ++m[s.label];
    return m;
}

// One byte per token over `n` bytes.
std::vector<TokenOffset> unit_tokens(std::size_t n) {
    std::vector<TokenOffset> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = {i, i + 1};
    return t;
}

AnnotatedChain chain_with(std::string text, std::vector<std::pair<BehaviorLabel, CharSpan>> segs) {
    AnnotatedChain c;
    c.raw_text = std::move(text);
    for (auto [l, s] : segs) c.segments.push_back({l, c.raw_text.substr(s.begin, s.size()), s});
    return c;
}

const char* kWords[] = {"alpha", "beta", "gamma", "so", "the", "Wait", "maybe", "x=3", "[", "]", "\"", "end"};

std::string random_phrase(std::mt19937_64& rng) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += kWords[rng() % std::size(kWords)];
    }
    return s;
}

}  // namespace

TEST_SUITE("annotations") {

TEST_CASE("annotated example fixture parses into 14 segments") {
    const auto text = read_fixture("annotated_example.txt");
    const auto chain = parse_annotated(text);
    CHECK(chain.warnings.empty());
    REQUIRE(chain.segments.size() == 14);
    const std::map<BehaviorLabel, int> want{
        {BehaviorLabel::initializing, 1},     {BehaviorLabel::deduction, 5},
        {BehaviorLabel::adding_knowledge, 3}, {BehaviorLabel::example_testing, 3},
        {BehaviorLabel::uncertainty_estimation, 1}, {BehaviorLabel::backtracking, 1},
    };
    CHECK(label_counts(chain) == want);
    CHECK(chain.segments.front().text.rfind("Okay, so I came across this riddle.", 0) == 0);
    CHECK(is_well_formed(chain));
}

TEST_CASE("annotated example renders back to the same markup") {
    const auto text = read_fixture("annotated_example.txt");
    const auto chain = parse_annotated(text);
    const auto rendered = render_annotated(chain);
    CHECK(collapse_whitespace(rendered) == collapse_whitespace(text));
    const auto again = parse_annotated(rendered);
    CHECK(again.segments == chain.segments);
    CHECK(again.raw_text == chain.raw_text);
}

TEST_CASE("degenerate and malformed markup") {
    const auto empty = parse_annotated("");
    CHECK(empty.segments.empty());
    CHECK(empty.warnings.empty());

    const auto unknown = parse_annotated(R"(["guessing"]I think so.["end-section"])");
    CHECK(unknown.segments.empty());
    REQUIRE(unknown.warnings.size() == 1);
    CHECK(unknown.warnings[0].kind == ParseWarning::Kind::unknown_label);
    CHECK(unknown.raw_text == "I think so.");

    const auto unclosed = parse_annotated(R"(["deduction"]A.["end-section"] ["backtracking"]Wait, no.)");
    CHECK(unclosed.segments.size() == 1);
    REQUIRE(unclosed.warnings.size() == 1);
    CHECK(unclosed.warnings[0].kind == ParseWarning::Kind::unclosed_section);
    CHECK(unclosed.warnings[0].offset == 31);

    const auto nested = parse_annotated(R"(["deduction"]A. ["backtracking"]Wait.["end-section"])");
    REQUIRE(nested.segments.size() == 1);
    CHECK(nested.segments[0].label == BehaviorLabel::backtracking);
    CHECK(nested.segments[0].text == "Wait.");
    REQUIRE(nested.warnings.size() == 1);
    CHECK(nested.warnings[0].kind == ParseWarning::Kind::nested_open);

    const auto stray = parse_annotated(R"(text["end-section"])");
    CHECK(stray.segments.empty());
    CHECK(stray.warnings.at(0).kind == ParseWarning::Kind::stray_end);
    CHECK(stray.raw_text == "text");

    const auto not_marker = parse_annotated(R"(a ["b c"] d)");
    CHECK(not_marker.raw_text == R"(a ["b c"] d)");
    CHECK(not_marker.warnings.empty());
}

TEST_CASE("zero-segment chain renders to its raw text") {
    AnnotatedChain c;
    c.raw_text = "Just some text. Nothing labeled.";
    CHECK(render_annotated(c) == c.raw_text);
}

TEST_CASE("property: render then parse reproduces random segment lists") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        AnnotatedChain c;
        const int n = static_cast<int>(rng() % 8);
        for (int i = 0; i < n; ++i) {
            if (rng() % 2) c.raw_text += random_phrase(rng);
            c.raw_text += rng() % 2 ? "\n" : " ";
            const auto text = random_phrase(rng);
            const CharSpan span{c.raw_text.size(), c.raw_text.size() + text.size()};
            c.raw_text += text;
            c.segments.push_back({kAllLabels[rng() % kLabelCount], text, span});
            c.raw_text += rng() % 2 ? " " : "";
        }
        REQUIRE(is_well_formed(c));
        const auto back = parse_annotated(render_annotated(c));
        CHECK(back.warnings.empty());
        REQUIRE(back.segments.size() == c.segments.size());
        for (std::size_t i = 0; i < c.segments.size(); ++i) {
            CHECK(back.segments[i].label == c.segments[i].label);
            CHECK(back.segments[i].text == c.segments[i].text);
        }
        CHECK(back.raw_text == c.raw_text);
    }
}

TEST_CASE("property: parser is total and accounts for every opening marker") {
    const char* pieces[] = {R"(["deduction"])", R"(["backtracking"])", R"(["end-section"])", R"(["bogus"])",
                            "text ", "[\"", "\"]", " ", "\n", "Wait. ", R"(["initializing"])", "["};
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 2000; ++trial) {
        std::string input;
        const int n = static_cast<int>(rng() % 14);
        for (int i = 0; i < n; ++i) input += pieces[rng() % std::size(pieces)];
        AnnotatedChain c;
        CHECK_NOTHROW(c = parse_annotated(input));
        CHECK(is_well_formed(c));

        static const std::regex marker(R"re(^\["([A-Za-z0-9_-]+)"\])re");
        std::size_t opens = 0;
        for (std::size_t p = 0; p < input.size();) {
            std::smatch m;
            const std::string rest = input.substr(p);
            if (std::regex_search(rest, m, marker)) {
                if (m[1] != "end-section") ++opens;
                p += m[0].length();
            } else {
                ++p;
            }
        }
        std::set<std::size_t> flagged;
        for (const auto& w : c.warnings) {
            if (w.kind != ParseWarning::Kind::stray_end) flagged.insert(w.offset);
        }
        CAPTURE(input);
        CHECK(c.segments.size() + flagged.size() == opens);
    }
}

TEST_CASE("align_spans adds the preceding token and caps at ten positions") {
    const std::string text(30, 'x');
    const auto tokens = unit_tokens(30);
    const auto c = chain_with(text, {{BehaviorLabel::deduction, {5, 9}},
                                     {BehaviorLabel::backtracking, {12, 21}},
                                     {BehaviorLabel::example_testing, {21, 30}}});
    const auto spans = align_spans(c, tokens);
    REQUIRE(spans.spans.size() == 3);
    CHECK(spans.spans[0].positions == std::vector<int>{4, 5, 6, 7, 8});
    CHECK(spans.spans[0].preceding == 4);
    CHECK_FALSE(spans.spans[0].truncated);

    const auto long_chain = chain_with(text, {{BehaviorLabel::deduction, {3, 21}}});
    const auto long_spans = align_spans(long_chain, tokens);
    CHECK(long_spans.spans[0].positions == std::vector<int>{2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    CHECK(long_spans.spans[0].truncated);
    CHECK(long_spans.truncated);

    const auto first = chain_with(text, {{BehaviorLabel::initializing, {0, 3}}});
    const auto first_spans = align_spans(first, tokens);
    CHECK(first_spans.spans[0].positions == std::vector<int>{0, 1, 2});
    CHECK_FALSE(first_spans.spans[0].preceding.has_value());

    const auto shifted = align_spans(first, tokens, 7);
    CHECK(shifted.spans[0].positions == std::vector<int>{6, 7, 8, 9});
    CHECK(shifted.spans[0].preceding == 6);
}

TEST_CASE("align_spans rejects tokens that do not tile the text") {
    const auto c = chain_with("abcdef", {{BehaviorLabel::deduction, {0, 3}}});
    auto tokens = unit_tokens(5);
    CHECK_THROWS_AS(align_spans(c, tokens), InvalidArgument);
    tokens = unit_tokens(6);
    tokens[2] = {1, 3};
    CHECK_THROWS_AS(align_spans(c, tokens), InvalidArgument);
}

TEST_CASE("property: span positions overlap their segment or precede it") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t len = 20 + rng() % 80;
        std::string text(len, 'a');
        std::vector<TokenOffset> tokens;
        for (std::size_t p = 0; p < len;) {
            const std::size_t w = std::min<std::size_t>(len - p, 1 + rng() % 4);
            tokens.push_back({p, p + w});
            p += w;
        }
        std::vector<std::pair<BehaviorLabel, CharSpan>> segs;
        for (std::size_t p = rng() % 5; p + 2 < len;) {
            const std::size_t w = 1 + rng() % 25;
            const std::size_t e = std::min(len, p + w);
            segs.push_back({kAllLabels[rng() % kLabelCount], {p, e}});
            p = e + rng() % 6;
        }
        const auto c = chain_with(text, segs);
        const int offset = static_cast<int>(rng() % 3);
        const auto spans = align_spans(c, tokens, offset);
        REQUIRE(spans.spans.size() == segs.size());
        for (const auto& s : spans.spans) {
            CHECK(s.positions.size() <= 10);
            const auto span = c.segments[s.segment_index].span;
            for (int p : s.positions) {
                const auto& t = tokens[p - offset];
                const bool overlaps = t.begin < span.end && t.end > span.begin;
                CHECK((overlaps || (s.preceding && p == *s.preceding)));
            }
            if (s.preceding) CHECK(s.positions.front() == *s.preceding);
            CHECK(std::is_sorted(s.positions.begin(), s.positions.end()));
        }
    }
}

TEST_CASE("sentence splitting") {
    const std::string text = "First one. e.g. this stays. Is it? Yes!\nNew line\n  indented \"quoted.\" End";
    const auto s = split_sentences(text);
    std::vector<std::string> got;
    for (auto span : s) got.push_back(text.substr(span.begin, span.size()));
    CHECK(got == std::vector<std::string>{"First one.", "e.g. this stays.", "Is it?", "Yes!", "New line",
                                          "indented \"quoted.\"", "End"});
    CHECK(split_sentences("").empty());
    CHECK(split_sentences("3.14 is pi").size() == 1);
    CHECK(split_sentences("lower\ncontinues").size() == 1);
}

TEST_CASE("behavior_stats counts labeled sentences and tokens") {
    const std::string all = "One step. Two step. Three.";
    const auto ded = chain_with(all, {{BehaviorLabel::deduction, {0, all.size()}}});
    const auto s1 = behavior_stats(ded, tokenizer::byte_offsets(all));
    CHECK(s1.sentence_count == 3);
    CHECK(s1.sentences(BehaviorLabel::deduction) == 1.0);
    CHECK(s1.tokens(BehaviorLabel::deduction) == 1.0);
    for (auto l : kAllLabels)
        if (l != BehaviorLabel::deduction) CHECK(s1.sentences(l) == 0.0);

    // Four sentences, the middle two backtracking.
    const std::string text = "Aaaa. Wait, bbb. Wait, ccc. Dddd.";
    const auto c = chain_with(text, {{BehaviorLabel::deduction, {0, 5}},
                                     {BehaviorLabel::backtracking, {6, 16}},
                                     {BehaviorLabel::backtracking, {17, 27}}});
    const auto s2 = behavior_stats(c, tokenizer::byte_offsets(text));
    CHECK(s2.sentence_count == 4);
    CHECK(s2.sentences(BehaviorLabel::backtracking) == 0.5);
    CHECK(s2.sentences(BehaviorLabel::deduction) == 0.25);
    CHECK(s2.tokens(BehaviorLabel::backtracking) == doctest::Approx(20.0 / 33.0));
}

TEST_CASE("behavior_stats majority rule and tie break") {
    const std::string text = "abcdefgh.";  // 9 characters, one sentence
    const auto minority = chain_with(text, {{BehaviorLabel::deduction, {0, 4}}});
    CHECK(behavior_stats(minority, tokenizer::byte_offsets(text)).sentences(BehaviorLabel::deduction) == 0.0);
    const auto majority = chain_with(text, {{BehaviorLabel::deduction, {0, 5}}});
    CHECK(behavior_stats(majority, tokenizer::byte_offsets(text)).sentences(BehaviorLabel::deduction) == 1.0);

    const std::string even = "abcdefg.";  // 8 characters split 4/4
    const auto tie = chain_with(even, {{BehaviorLabel::backtracking, {0, 4}}, {BehaviorLabel::deduction, {4, 8}}});
    const auto s = behavior_stats(tie, tokenizer::byte_offsets(even));
    CHECK(s.sentences(BehaviorLabel::backtracking) == 1.0);
    CHECK(s.sentences(BehaviorLabel::deduction) == 0.0);
}

TEST_CASE("property: stats stay in bounds and count sentences like the generator") {
    const char* starts[] = {"Wait", "So", "Then", "Maybe", "For example"};
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 10);
        std::string text;
        std::vector<CharSpan> sentences;
        for (int i = 0; i < n; ++i) {
            if (i) text += rng() % 3 ? " " : "\n";
            const std::string s = std::string(starts[rng() % 5]) + " word " + std::to_string(rng() % 100) +
                                  (rng() % 4 ? "." : "?");
            sentences.push_back({text.size(), text.size() + s.size()});
            text += s;
        }
        AnnotatedChain c;
        c.raw_text = text;
        for (const auto& s : sentences) {
            if (rng() % 3 == 0) continue;
            c.segments.push_back({kAllLabels[rng() % kLabelCount], text.substr(s.begin, s.size()), s});
        }
        const auto stats = behavior_stats(c, tokenizer::byte_offsets(text));
        CHECK(stats.sentence_count == n);
        double total = 0.0;
        for (auto l : kAllLabels) {
            CHECK(stats.sentences(l) >= 0.0);
            CHECK(stats.sentences(l) <= 1.0);
            CHECK(stats.tokens(l) >= 0.0);
            CHECK(stats.tokens(l) <= 1.0);
            total += stats.sentences(l);
        }
        CHECK(total <= 1.0 + 1e-12);
        CHECK(total == doctest::Approx(static_cast<double>(c.segments.size()) / n));
    }
}

}
