#pragma once

// End-to-end orchestration: configuration, the hash-gated stage sequence
// generate -> annotate -> extract -> attribute -> steer -> evaluate -> report,
// and the run manifest that records it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "steerkit/analysis.hpp"
#include "steerkit/annotator.hpp"
#include "steerkit/attribution.hpp"
#include "steerkit/corpus.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/tasks.hpp"

namespace steerkit {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kManifestSchemaVersion = 1;

// ---- configuration -------------------------------------------------------

// TOML-style key/value file: [section] headers, `key = value` lines, '#'
// comments. Values are double-quoted strings, integers, reals, true/false,
// or single-line [a, b, c] arrays of those.
using ConfigScalar = std::variant<std::string, double, bool>;
using ConfigValue = std::variant<std::string, double, bool, std::vector<ConfigScalar>>;

// Keys are "section.key". Throws FormatError naming the line.
std::map<std::string, ConfigValue> parse_config_table(std::string_view text, std::string_view source = "config");

struct PipelineConfig {
    // [model]
    std::filesystem::path weights;
    // [tasks]
    std::filesystem::path tasks;
    int heldout = 50;
    std::uint64_t split_seed = 1;
    // [output]
    std::filesystem::path root;
    // [annotator]
    AnnotatorConfig annotator;
    // [generation]
    int max_new_tokens = kDefaultMaxNewTokens;
    // [attribution]
    double tau = kDefaultScreenTau;
    AttributionOptions attribution;
    // [steering]
    std::vector<BehaviorLabel> categories{kSteeredLabels.begin(), kSteeredLabels.end()};
    std::vector<int> signs{+1, -1};
    std::vector<double> alphas{1.0};
    // [evaluate]
    FractionBasis basis = FractionBasis::tokens;

    // Throws InvalidArgument naming the offending key.
    void validate() const;
};

// Relative paths resolve against `base_dir`. Unknown keys are errors.
// `overrides` are "section.key=value" strings applied after the file.
PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                            std::span<const std::string> overrides = {}, std::string_view source = "config");
PipelineConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

// Canonical JSON snapshot (paths as given after resolution).
std::string config_snapshot(const PipelineConfig& config);

// ---- manifest ------------------------------------------------------------

enum class Stage { generate, annotate, extract, attribute, steer, evaluate, report };
inline constexpr std::array<Stage, 7> kAllStages{Stage::generate,  Stage::annotate, Stage::extract, Stage::attribute,
                                                 Stage::steer,     Stage::evaluate, Stage::report};

std::string_view to_string(Stage stage);
// Throws InvalidArgument.
Stage parse_stage(std::string_view name);

enum class StageStatus { pending, complete, failed };

std::string_view to_string(StageStatus status);

struct StageRecord {
    Stage stage = Stage::generate;
    StageStatus status = StageStatus::pending;
    std::uint64_t input_hash = 0;
    std::uint64_t output_hash = 0;
    std::vector<std::string> outputs;  // relative to the output root, sorted
    std::string error;

    friend bool operator==(const StageRecord&, const StageRecord&) = default;
};

struct RunManifest {
    int schema_version = kManifestSchemaVersion;
    std::string tool_version{kToolVersion};
    std::string config;  // config_snapshot
    std::uint64_t model_fingerprint = 0;
    std::uint64_t split_seed = 0;
    std::vector<std::string> heldout_ids;  // sorted
    std::vector<StageRecord> stages;       // one per stage, pipeline order

    const StageRecord& at(Stage stage) const;
    StageRecord& at(Stage stage);

    friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(std::string_view text);

// ---- running -------------------------------------------------------------

class PipelineError : public Error {
public:
    PipelineError(Stage stage, const std::string& message);
    Stage stage() const { return stage_; }

private:
    Stage stage_;
};

// The output root is held by another process (its lock file exists).
class LockError : public IoError {
public:
    using IoError::IoError;
};

struct PipelineOptions {
    // Run just this stage; its upstream stages must already be complete.
    std::optional<Stage> only;
    HttpTransport transport;
    // Progress lines.
    std::function<void(std::string_view)> log;
    // Forwarded to the steering sweep (simulated kill).
    std::function<bool(int computed)> steer_stop_after;
};

struct PipelineResult {
    RunManifest manifest;
    std::vector<Stage> ran;
    std::vector<Stage> skipped;
    // Set when the steering sweep was stopped before finishing.
    bool interrupted = false;
};

// Checks that the weight and task files exist before touching the output
// root, takes the advisory lock (root/.lock), then runs every stage whose
// input hash or on-disk output differs from the previous manifest. A
// failing stage is recorded as failed in the manifest and rethrown as
// PipelineError.
PipelineResult run_pipeline(const PipelineConfig& config, const PipelineOptions& options = {});

// The annotated extraction corpus of a pipeline output root (or of any
// directory holding generations.jsonl and annotations.jsonl, directly or
// under generate/ and annotate/).
std::vector<AnnotatedPrompt> load_annotated_corpus(const std::filesystem::path& dir);

// Hash of the stage's files as they are on disk now. Steering run records
// contribute their content hash, which leaves out wall time.
std::uint64_t output_hash(const std::filesystem::path& root, std::span<const std::string> outputs);

}  // namespace steerkit
