#include "json_codec.hpp"

#include "steerkit/errors.hpp"

namespace steerkit::detail {

namespace {

constexpr std::array<std::string_view, 6> kWarningKinds{
    "unknown_label", "unclosed_section", "nested_open", "stray_end", "empty_section", "unmatched_segment",
};

ParseWarning::Kind warning_kind(const std::string& name) {
    for (std::size_t i = 0; i < kWarningKinds.size(); ++i)
        if (kWarningKinds[i] == name) return static_cast<ParseWarning::Kind>(i);
    throw FormatError("unknown warning kind \"" + name + "\"");
}

ojson fractions(const std::array<double, kLabelCount>& f) {
    ojson j = ojson::object();
    for (auto l : kAllLabels) j[std::string(to_string(l))] = f[index_of(l)];
    return j;
}

std::array<double, kLabelCount> fractions_from(const nlohmann::json& j) {
    std::array<double, kLabelCount> f{};
    for (auto l : kAllLabels) f[index_of(l)] = j.at(std::string(to_string(l))).get<double>();
    return f;
}

}  // namespace

bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t n;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            n = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            n = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            n = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + n >= s.size()) return false;
        for (std::size_t k = 1; k <= n; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (b & 0x3F);
        }
        constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
        if (cp < kMin[n] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += n + 1;
    }
    return true;
}

ojson text_to_json(std::string_view s) {
    if (is_valid_utf8(s)) return std::string(s);
    auto bytes = ojson::array();
    for (unsigned char c : s) bytes.push_back(static_cast<int>(c));
    return ojson{{"bytes", std::move(bytes)}};
}

std::string text_from_json(const nlohmann::json& j) {
    if (j.is_string()) return j.get<std::string>();
    std::string out;
    for (const auto& b : j.at("bytes")) {
        const int v = b.get<int>();
        if (v < 0 || v > 255) throw FormatError("byte value out of range");
        out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
    return out;
}

BehaviorLabel label_from_json(const nlohmann::json& j) {
    const auto name = j.get<std::string>();
    const auto label = parse_label(name);
    if (!label) throw FormatError("unknown behavior label \"" + name + "\"");
    return *label;
}

ojson chain_to_json(const AnnotatedChain& chain) {
    ojson j;
    j["raw_text"] = text_to_json(chain.raw_text);
    j["source"] = {{"model", chain.source.model}, {"task_id", chain.source.task_id}};
    j["degraded"] = chain.degraded;
    auto segs = ojson::array();
    for (const auto& s : chain.segments) {
        segs.push_back({{"label", to_string(s.label)}, {"begin", s.span.begin}, {"end", s.span.end}});
    }
    j["segments"] = std::move(segs);
    auto warns = ojson::array();
    for (const auto& w : chain.warnings) {
        warns.push_back({{"kind", kWarningKinds[static_cast<std::size_t>(w.kind)]},
                         {"offset", w.offset},
                         {"message", text_to_json(w.message)}});
    }
    j["warnings"] = std::move(warns);
    return j;
}

AnnotatedChain chain_from_json(const nlohmann::json& j) {
    try {
        AnnotatedChain c;
        c.raw_text = text_from_json(j.at("raw_text"));
        c.source.model = j.at("source").at("model").get<std::string>();
        c.source.task_id = j.at("source").at("task_id").get<std::string>();
        c.degraded = j.at("degraded").get<bool>();
        for (const auto& s : j.at("segments")) {
            const CharSpan span{s.at("begin").get<std::size_t>(), s.at("end").get<std::size_t>()};
            if (span.end < span.begin || span.end > c.raw_text.size()) throw FormatError("segment span out of range");
            c.segments.push_back({label_from_json(s.at("label")), c.raw_text.substr(span.begin, span.size()), span});
        }
        for (const auto& w : j.at("warnings")) {
            c.warnings.push_back({warning_kind(w.at("kind").get<std::string>()), w.at("offset").get<std::size_t>(),
                                  text_from_json(w.at("message"))});
        }
        if (!is_well_formed(c)) throw FormatError("annotation segments overlap or are out of order");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("annotation: ") + e.what());
    }
}

ojson stats_to_json(const BehaviorStats& stats) {
    ojson j;
    j["sentence_count"] = stats.sentence_count;
    j["token_count"] = stats.token_count;
    j["sentence_fraction"] = fractions(stats.sentence_fraction);
    j["token_fraction"] = fractions(stats.token_fraction);
    return j;
}

BehaviorStats stats_from_json(const nlohmann::json& j) {
    try {
        BehaviorStats s;
        s.sentence_count = j.at("sentence_count").get<int>();
        s.token_count = j.at("token_count").get<int>();
        s.sentence_fraction = fractions_from(j.at("sentence_fraction"));
        s.token_fraction = fractions_from(j.at("token_fraction"));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("stats: ") + e.what());
    }
}

ojson filter_to_json(const PositionFilter& filter) {
    ojson j;
    switch (filter.kind) {
        case PositionFilter::Kind::all: j["kind"] = "all"; break;
        case PositionFilter::Kind::generated: j["kind"] = "generated"; break;
        case PositionFilter::Kind::explicit_set:
            j["kind"] = "explicit";
            j["positions"] = filter.positions;
            break;
    }
    return j;
}

PositionFilter filter_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "all") return PositionFilter::all();
    if (kind == "generated") return PositionFilter::generated();
    if (kind == "explicit") return PositionFilter::at(j.at("positions").get<std::vector<int>>());
    throw FormatError("unknown position filter \"" + kind + "\"");
}

}  // namespace steerkit::detail
