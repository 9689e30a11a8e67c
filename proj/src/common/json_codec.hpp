#pragma once

// JSON encodings shared by the run, corpus and report files.

#include "json.hpp"
#include "steerkit/annotations.hpp"
#include "steerkit/model.hpp"

namespace steerkit::detail {

using ojson = nlohmann::ordered_json;

// Text as a JSON string when it is valid UTF-8, otherwise {"bytes": [...]}
// so arbitrary model output survives a round trip.
bool is_valid_utf8(std::string_view s);
ojson text_to_json(std::string_view s);
std::string text_from_json(const nlohmann::json& j);

ojson chain_to_json(const AnnotatedChain& chain);
// Throws FormatError; the result satisfies is_well_formed.
AnnotatedChain chain_from_json(const nlohmann::json& j);

ojson stats_to_json(const BehaviorStats& stats);
BehaviorStats stats_from_json(const nlohmann::json& j);

BehaviorLabel label_from_json(const nlohmann::json& j);

ojson filter_to_json(const PositionFilter& filter);
PositionFilter filter_from_json(const nlohmann::json& j);

}  // namespace steerkit::detail
