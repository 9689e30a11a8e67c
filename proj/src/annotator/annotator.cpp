#include "steerkit/annotator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "steerkit/errors.hpp"

namespace steerkit {

std::string_view to_string(AnnotatorBackend backend) {
    return backend == AnnotatorBackend::external_service ? "external" : "mock";
}

AnnotatorBackend parse_backend(std::string_view name) {
    if (name == "external") return AnnotatorBackend::external_service;
    if (name == "mock") return AnnotatorBackend::mock_rules;
    throw InvalidArgument("unknown annotator backend \"" + std::string(name) + "\" (expected external or mock)");
}

std::vector<MockRule> default_mock_rules() {
    using M = MockRule::Match;
    return {
        {BehaviorLabel::backtracking, M::starts_with, {"wait"}},
        {BehaviorLabel::example_testing, M::contains, {"for example", "let me test"}},
        {BehaviorLabel::adding_knowledge, M::contains, {"i remember", "recall"}},
        {BehaviorLabel::uncertainty_estimation, M::contains, {"maybe", "might"}},
    };
}

void AnnotatorConfig::validate() const {
    if (max_retries < 0) throw InvalidArgument("annotator max_retries must be >= 0");
    if (backend == AnnotatorBackend::external_service) {
        if (endpoint.empty()) throw InvalidArgument("annotator endpoint is empty");
        if (token_env.empty()) throw InvalidArgument("annotator token_env is empty");
        if (max_in_flight < 1) throw InvalidArgument("annotator max_in_flight must be >= 1");
        if (timeout.count() <= 0) throw InvalidArgument("annotator timeout must be positive");
    }
}

std::string build_request_body(const AnnotatorConfig& config, std::string_view chain) {
    nlohmann::ordered_json body;
    body["model"] = config.model;
    body["messages"] = nlohmann::ordered_json::array(
        {nlohmann::ordered_json{{"role", "user"}, {"content", build_annotation_prompt(chain)}}});
    body["temperature"] = 0;
    return body.dump();
}

namespace {

unsigned char lower(char c) { return static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(c))); }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\''; }

bool iequals_at(std::string_view text, std::size_t pos, std::string_view word) {
    if (pos + word.size() > text.size()) return false;
    for (std::size_t i = 0; i < word.size(); ++i)
        if (lower(text[pos + i]) != lower(word[i])) return false;
    return true;
}

bool rule_matches(const MockRule& rule, std::string_view sentence) {
    for (const auto& kw : rule.keywords) {
        if (rule.match == MockRule::Match::starts_with) {
            if (iequals_at(sentence, 0, kw) && (kw.size() == sentence.size() || !is_word(sentence[kw.size()])))
                return true;
            continue;
        }
        for (std::size_t p = 0; p + kw.size() <= sentence.size(); ++p) {
            const std::size_t e = p + kw.size();
            if ((p == 0 || !is_word(sentence[p - 1])) && (e == sentence.size() || !is_word(sentence[e])) &&
                iequals_at(sentence, p, kw))
                return true;
        }
    }
    return false;
}

// Whitespace-collapsed copy of `text` with a map back to original offsets.
struct Collapsed {
    std::string text;
    std::vector<std::size_t> origin;
};

Collapsed collapse(std::string_view text) {
    Collapsed c;
    bool in_space = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (std::isspace(static_cast<unsigned char>(text[i]))) {
            if (!in_space) {
                c.text.push_back(' ');
                c.origin.push_back(i);
            }
            in_space = true;
        } else {
            c.text.push_back(text[i]);
            c.origin.push_back(i);
            in_space = false;
        }
    }
    return c;
}

std::string collapse_trimmed(std::string_view text) {
    auto c = collapse(text).text;
    while (!c.empty() && c.back() == ' ') c.pop_back();
    const auto first = c.find_first_not_of(' ');
    return first == std::string::npos ? std::string{} : c.substr(first);
}

}  // namespace

AnnotatedChain mock_annotate(std::string_view text, const AnnotatorConfig& config) {
    AnnotatedChain chain;
    chain.raw_text = std::string(text);
    chain.source.model = "mock-rules";
    const auto sentences = split_sentences(text);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto span = sentences[i];
        const std::string_view sentence = text.substr(span.begin, span.size());
        BehaviorLabel label = config.default_label;
        if (i == 0) {
            label = config.first_sentence_label;
        } else {
            for (const auto& rule : config.rules) {
                if (rule_matches(rule, sentence)) {
                    label = rule.label;
                    break;
                }
            }
        }
        chain.segments.push_back({label, std::string(sentence), span});
    }
    return chain;
}

AnnotatedChain anchor_reply(std::string_view original, const AnnotatedChain& reply) {
    AnnotatedChain out;
    out.raw_text = std::string(original);
    out.source = reply.source;
    out.warnings = reply.warnings;
    const Collapsed hay = collapse(original);
    std::size_t cursor = 0;  // in hay.text
    for (const auto& seg : reply.segments) {
        const std::string needle = collapse_trimmed(seg.text);
        const auto at = needle.empty() ? std::string::npos : hay.text.find(needle, cursor);
        if (at == std::string::npos) {
            out.warnings.push_back({ParseWarning::Kind::unmatched_segment, seg.span.begin,
                                    "\"" + std::string(to_string(seg.label)) +
                                        "\" segment not found in the original chain; dropped"});
            continue;
        }
        const CharSpan span{hay.origin[at], hay.origin[at + needle.size() - 1] + 1};
        out.segments.push_back({seg.label, out.raw_text.substr(span.begin, span.size()), span});
        cursor = at + needle.size();
    }
    return out;
}

namespace {

AnnotatedChain annotate_external(std::string_view text, const AnnotatorConfig& config,
                                 const HttpTransport& transport) {
    const char* token = std::getenv(config.token_env.c_str());
    if (token == nullptr || *token == '\0') {
        throw AuthenticationError("annotator token environment variable " + config.token_env + " is not set");
    }
    const HttpRequest request{config.endpoint, build_request_body(config, text), token, config.timeout};
    const HttpTransport& send = transport ? transport : HttpTransport(default_http_transport);

    std::string last_error = "no attempt made";
    std::optional<AnnotatedChain> last_reply;
    const int attempts = config.max_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        HttpResponse response;
        try {
            response = send(request);
        } catch (const TransportError& e) {
            last_error = e.what();
            continue;
        }
        if (response.status == 401 || response.status == 403) {
            throw AuthenticationError("annotator endpoint " + config.endpoint + " rejected the credentials (HTTP " +
                                      std::to_string(response.status) + ")");
        }
        if (response.status != 200) {
            last_error = "HTTP " + std::to_string(response.status);
            continue;
        }
        std::string content;
        try {
            const auto json = nlohmann::json::parse(response.body);
            content = json.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("malformed response: ") + e.what();
            continue;
        }
        auto chain = anchor_reply(text, parse_annotated(content));
        chain.source.model = config.model;
        if (!chain.segments.empty()) return chain;
        last_reply = std::move(chain);
        last_error = "reply contained no segments";
    }
    if (last_reply) {
        last_reply->degraded = true;
        return *std::move(last_reply);
    }
    throw TransportError("annotator endpoint " + config.endpoint + " failed after " + std::to_string(attempts) +
                         " attempt(s): " + last_error);
}

}  // namespace

AnnotatedChain annotate(std::string_view text, const AnnotatorConfig& config, const HttpTransport& transport) {
    config.validate();
    if (text.empty()) throw InvalidArgument("cannot annotate an empty chain");
    if (config.backend == AnnotatorBackend::mock_rules) return mock_annotate(text, config);
    return annotate_external(text, config, transport);
}

std::vector<AnnotatedChain> annotate_all(std::span<const std::string> texts, const AnnotatorConfig& config,
                                         const HttpTransport& transport) {
    config.validate();
    std::vector<AnnotatedChain> out(texts.size());
    if (config.backend == AnnotatorBackend::mock_rules) {
        for (std::size_t i = 0; i < texts.size(); ++i) out[i] = annotate(texts[i], config, transport);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < texts.size(); i = next++) {
            try {
                out[i] = annotate(texts[i], config, transport);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = texts.size();
            }
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight), texts.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace steerkit
