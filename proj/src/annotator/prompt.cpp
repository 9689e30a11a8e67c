#include "steerkit/annotator.hpp"

namespace steerkit {

namespace {

constexpr std::string_view kTemplate = R"PROMPT(Please split the following reasoning chain of an LLM into annotated parts using labels and the following format ["label"]...["end-section"]. A sentence should be split into multiple parts if it incorporates multiple behaviours indicated by the labels.

Available labels:
0. initializing -> The model is rephrasing the given task and states initial thoughts.
1. deduction -> The model is performing a deduction step based on its current approach and assumptions.
2. adding-knowledge -> The model is enriching the current approach with recalled facts.
3. example-testing -> The model generates examples to test its current approach.
4. uncertainty-estimation -> The model is stating its own uncertainty.
5. backtracking -> The model decides to change its approach.

The reasoning chain to analyze:
{thinking_process}

Answer only with the annotated text. Only use the labels outlined above. If there is a tail that has no annotation leave it out.)PROMPT";

constexpr std::string_view kPlaceholder = "{thinking_process}";

}  // namespace

std::string_view annotation_prompt_template() { return kTemplate; }

std::string build_annotation_prompt(std::string_view chain) {
    const auto at = kTemplate.find(kPlaceholder);
    std::string out;
    out.reserve(kTemplate.size() + chain.size());
    out.append(kTemplate.substr(0, at));
    out.append(chain);
    out.append(kTemplate.substr(at + kPlaceholder.size()));
    return out;
}

}  // namespace steerkit
