#pragma once

// Generation under a signed, scaled steering vector, and sweeps of
// baseline/positive/negative runs over task sets with resumable on-disk
// persistence.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/annotations.hpp"
#include "steerkit/annotator.hpp"
#include "steerkit/attribution.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/model.hpp"

namespace steerkit {

inline constexpr double kDefaultSteeringAlpha = 1.0;

struct SteeringSpec {
    BehaviorLabel category = BehaviorLabel::backtracking;
    int layer = 0;
    int sign = 0;  // 0: baseline, no intervention
    double alpha = kDefaultSteeringAlpha;
    PositionFilter filter = PositionFilter::generated();

    bool is_baseline() const { return sign == 0; }
    // sign in {-1, 0, +1}; alpha finite and >= 0. Throws InvalidArgument.
    void validate() const;

    friend bool operator==(const SteeringSpec& a, const SteeringSpec& b);
};

// The intervention a spec applies: the bank's normalized vector at
// (category, layer) with coefficient sign * alpha. Empty for a baseline.
// Throws InvalidArgument when the bank lacks the entry.
std::optional<Intervention> steering_intervention(const SteeringVectorBank& bank, const SteeringSpec& spec);

struct SteeringRun {
    std::string task_id;
    SteeringSpec spec;
    std::vector<Token> prompt;
    std::vector<Token> output;  // generated tokens, EOS excluded
    std::string text;           // decoded output
    std::optional<AnnotatedChain> annotation;
    std::optional<BehaviorStats> stats;
    double wall_seconds = 0.0;
    // Hash of everything that determines the run (set by the sweep).
    std::uint64_t inputs_hash = 0;

    // "<task>.baseline" or "<task>.<category>.L<layer>.<plus|minus>.a<alpha>".
    std::string run_id() const;
};

// Generates from `prompt` with the spec's intervention active at every
// decode step. No annotation is attached.
SteeringRun steer_generate(const Weights& weights, const SteeringVectorBank& bank, const SteeringSpec& spec,
                           std::string task_id, std::span<const Token> prompt,
                           const GenerateOptions& generation = {});

// Annotates run.text and fills annotation and stats. An empty output gets
// an empty chain without contacting the annotator.
void annotate_run(SteeringRun& run, const AnnotatorConfig& annotator, const HttpTransport& transport = {});

// JSON form of a run (one file per run). Throws FormatError on parse.
std::string run_to_json(const SteeringRun& run);
SteeringRun run_from_json(std::string_view text);

// Hash of everything in a run except wall time.
std::uint64_t run_content_hash(const SteeringRun& run);

struct SweepTask {
    std::string id;
    std::vector<Token> prompt;
};

struct SweepOptions {
    std::vector<BehaviorLabel> categories{kSteeredLabels.begin(), kSteeredLabels.end()};
    std::vector<int> signs{+1, -1};
    std::vector<double> alphas{kDefaultSteeringAlpha};
    GenerateOptions generation;
    AnnotatorConfig annotator;
    HttpTransport transport;
    // Empty: keep everything in memory.
    std::filesystem::path out_dir;
    // Called after each newly computed run with the number computed so far;
    // returning true stops the sweep there (as if it had been killed).
    std::function<bool(int computed)> stop_after;
};

struct SweepFailure {
    std::string run_id;
    std::string message;
};

struct SweepResult {
    std::vector<SteeringRun> runs;  // baselines first per task, then steered, in sweep order
    std::vector<SweepFailure> failures;
    int computed = 0;
    int reused = 0;
    bool interrupted = false;
};

// Runs tasks x categories x signs x alphas, plus one baseline per task.
// The layer for each category comes from the profile's selection. With an
// out_dir, each run is committed atomically as runs/<run_id>.json plus
// runs/<run_id>.txt, and runs already on disk with identical inputs are
// reused rather than recomputed. Individual failures are recorded and
// skipped. manifest.json (run ids and content hashes, no timings) is
// rewritten after every commit.
SweepResult steering_sweep(const Weights& weights, const SteeringVectorBank& bank,
                           const LayerAttributionProfile& profile, std::span<const SweepTask> tasks,
                           const SweepOptions& options = {});

// Reads every runs/*.json under `dir`, sorted by run id.
std::vector<SteeringRun> load_runs(const std::filesystem::path& dir);

}  // namespace steerkit
