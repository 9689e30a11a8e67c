#pragma once

// Behavior annotation of raw reasoning chains: either an external
// chat-completion service driven by the fixed annotation prompt, or a
// deterministic keyword-rule mock.

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/annotations.hpp"

namespace steerkit {

enum class AnnotatorBackend { external_service, mock_rules };

std::string_view to_string(AnnotatorBackend backend);
// "external" or "mock"; throws InvalidArgument otherwise.
AnnotatorBackend parse_backend(std::string_view name);

// A sentence matches when it starts with (or, for `contains`, includes at a
// word boundary) any keyword, ignoring ASCII case.
struct MockRule {
    enum class Match { starts_with, contains };
    BehaviorLabel label;
    Match match = Match::contains;
    std::vector<std::string> keywords;
};

// Backtracking, example-testing, adding-knowledge, uncertainty-estimation,
// in that priority order.
std::vector<MockRule> default_mock_rules();

struct AnnotatorConfig {
    AnnotatorBackend backend = AnnotatorBackend::mock_rules;

    // external-service
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string token_env = "STEERKIT_ANNOTATOR_TOKEN";
    std::chrono::milliseconds timeout{120000};
    int max_retries = 2;
    int max_in_flight = 4;

    // mock-rules
    std::vector<MockRule> rules = default_mock_rules();
    BehaviorLabel first_sentence_label = BehaviorLabel::initializing;
    BehaviorLabel default_label = BehaviorLabel::deduction;

    // Throws InvalidArgument.
    void validate() const;
};

// The annotation prompt with its {thinking_process} placeholder.
std::string_view annotation_prompt_template();
std::string build_annotation_prompt(std::string_view chain);

// JSON body of the chat-completion request for `chain`.
std::string build_request_body(const AnnotatorConfig& config, std::string_view chain);

struct HttpRequest {
    std::string url;
    std::string body;
    std::string bearer_token;
    std::chrono::milliseconds timeout{0};
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

// Performs one POST. Throws TransportError when no response was received.
using HttpTransport = std::function<HttpResponse(const HttpRequest&)>;

// cpp-httplib based transport (https when built with OpenSSL).
HttpResponse default_http_transport(const HttpRequest& request);

// Places the segments of `reply` (parsed from the service's markup) into
// `original`, leaving original untouched. A segment whose text cannot be
// found in order is dropped with an unmatched_segment warning.
AnnotatedChain anchor_reply(std::string_view original, const AnnotatedChain& reply);

AnnotatedChain mock_annotate(std::string_view text, const AnnotatorConfig& config);

// Throws InvalidArgument on empty text, AuthenticationError on a missing
// token or a 401/403 reply, TransportError (naming the endpoint) once the
// retries are exhausted. Replies without any segment are retried; if the
// last one still has none the chain comes back with degraded = true.
AnnotatedChain annotate(std::string_view text, const AnnotatorConfig& config, const HttpTransport& transport = {});

// Annotates every text, up to config.max_in_flight at a time for the
// external backend. Results are in input order.
std::vector<AnnotatedChain> annotate_all(std::span<const std::string> texts, const AnnotatorConfig& config,
                                         const HttpTransport& transport = {});

}  // namespace steerkit
