#include "steerkit/steering.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "../common/json_codec.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"
#include "steerkit/tokenizer.hpp"
#include "steerkit/weights_io.hpp"

namespace steerkit {

using detail::ojson;

void SteeringSpec::validate() const {
    if (sign < -1 || sign > 1) throw InvalidArgument("steering sign must be -1, 0 or +1, got " + std::to_string(sign));
    if (!std::isfinite(alpha) || alpha < 0.0) throw InvalidArgument("steering alpha must be finite and >= 0");
    if (layer < 0) throw InvalidArgument("steering layer must be >= 0");
}

bool operator==(const SteeringSpec& a, const SteeringSpec& b) {
    return a.category == b.category && a.layer == b.layer && a.sign == b.sign && a.alpha == b.alpha &&
           a.filter.kind == b.filter.kind && a.filter.positions == b.filter.positions;
}

std::optional<Intervention> steering_intervention(const SteeringVectorBank& bank, const SteeringSpec& spec) {
    spec.validate();
    if (spec.is_baseline()) return std::nullopt;
    const auto& v = bank.at(spec.category, spec.layer);
    return Intervention{spec.layer, v.normalized, spec.sign * spec.alpha, spec.filter};
}

namespace {

std::string format_alpha(double alpha) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", alpha);
    return buf;
}

void check_task_id(const std::string& id) {
    if (id.empty()) throw InvalidArgument("empty task id");
    for (char c : id) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
        if (!ok) throw InvalidArgument("task id \"" + id + "\" may only contain letters, digits, '-' and '_'");
    }
}

}  // namespace

std::string SteeringRun::run_id() const {
    if (spec.is_baseline()) return task_id + ".baseline";
    return task_id + "." + std::string(to_string(spec.category)) + ".L" + std::to_string(spec.layer) + "." +
           (spec.sign > 0 ? "plus" : "minus") + ".a" + format_alpha(spec.alpha);
}

SteeringRun steer_generate(const Weights& weights, const SteeringVectorBank& bank, const SteeringSpec& spec,
                           std::string task_id, std::span<const Token> prompt, const GenerateOptions& generation) {
    check_task_id(task_id);
    const auto intervention = steering_intervention(bank, spec);
    if (intervention && bank.d_model() != weights.config.d_model) {
        throw InvalidArgument("bank d_model does not match the model");
    }
    SteeringRun run;
    run.task_id = std::move(task_id);
    run.spec = spec;
    run.prompt.assign(prompt.begin(), prompt.end());
    const auto start = std::chrono::steady_clock::now();
    if (intervention) {
        run.output = generate(weights, prompt, generation, std::span<const Intervention>(&*intervention, 1));
    } else {
        run.output = generate(weights, prompt, generation);
    }
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    run.text = tokenizer::decode(run.output);
    return run;
}

void annotate_run(SteeringRun& run, const AnnotatorConfig& annotator, const HttpTransport& transport) {
    AnnotatedChain chain;
    if (run.text.empty()) {
        chain.source.model = std::string(to_string(annotator.backend));
    } else {
        chain = annotate(run.text, annotator, transport);
    }
    chain.source.task_id = run.task_id;
    run.stats = behavior_stats(chain, tokenizer::byte_offsets(chain.raw_text));
    run.annotation = std::move(chain);
}

namespace {

ojson run_json(const SteeringRun& run, bool with_time) {
    ojson j;
    j["schema_version"] = 1;
    j["run_id"] = run.run_id();
    j["task_id"] = run.task_id;
    ojson spec;
    spec["category"] = to_string(run.spec.category);
    spec["layer"] = run.spec.layer;
    spec["sign"] = run.spec.sign;
    spec["alpha"] = run.spec.alpha;
    spec["filter"] = detail::filter_to_json(run.spec.filter);
    j["spec"] = std::move(spec);
    j["inputs_hash"] = hex64(run.inputs_hash);
    j["prompt"] = run.prompt;
    j["output"] = run.output;
    j["text"] = detail::text_to_json(run.text);
    j["annotation"] = run.annotation ? detail::chain_to_json(*run.annotation) : ojson(nullptr);
    j["stats"] = run.stats ? detail::stats_to_json(*run.stats) : ojson(nullptr);
    if (with_time) j["wall_seconds"] = run.wall_seconds;
    return j;
}

}  // namespace

std::string run_to_json(const SteeringRun& run) { return run_json(run, true).dump(2) + "\n"; }

SteeringRun run_from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        SteeringRun run;
        run.task_id = j.at("task_id").get<std::string>();
        const auto& spec = j.at("spec");
        run.spec.category = detail::label_from_json(spec.at("category"));
        run.spec.layer = spec.at("layer").get<int>();
        run.spec.sign = spec.at("sign").get<int>();
        run.spec.alpha = spec.at("alpha").get<double>();
        run.spec.filter = detail::filter_from_json(spec.at("filter"));
        try {
            run.spec.validate();
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("run spec: ") + e.what());
        }
        run.inputs_hash = parse_hex64(j.at("inputs_hash").get<std::string>());
        run.prompt = j.at("prompt").get<std::vector<Token>>();
        run.output = j.at("output").get<std::vector<Token>>();
        run.text = detail::text_from_json(j.at("text"));
        if (!j.at("annotation").is_null()) run.annotation = detail::chain_from_json(j.at("annotation"));
        if (!j.at("stats").is_null()) run.stats = detail::stats_from_json(j.at("stats"));
        run.wall_seconds = j.at("wall_seconds").get<double>();
        if (j.at("run_id").get<std::string>() != run.run_id()) throw FormatError("run id does not match its spec");
        return run;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("run file: ") + e.what());
    }
}

std::uint64_t run_content_hash(const SteeringRun& run) { return fnv1a64(run_json(run, false).dump()); }

namespace {

std::uint64_t bank_content_hash(const SteeringVectorBank& bank) {
    return Fnv1a64{}.update(serialize_bank(bank)).digest();
}

std::uint64_t inputs_hash(std::uint64_t model_fp, std::uint64_t bank_fp, const SteeringSpec& spec,
                          const SweepTask& task, const SweepOptions& options) {
    Fnv1a64 h;
    h.update_u64(model_fp);
    // Baselines do not read the bank.
    h.update_u64(spec.is_baseline() ? 0 : bank_fp);
    h.field(run_json(SteeringRun{task.id, spec, {}, {}, {}, {}, {}, 0.0, 0}, false).at("spec").dump());
    h.update_u64(task.prompt.size());
    for (Token t : task.prompt) h.update_u64(static_cast<std::uint32_t>(t));
    h.update_u64(static_cast<std::uint64_t>(options.generation.max_new_tokens));
    h.update_u64(options.generation.eos_token ? static_cast<std::uint64_t>(*options.generation.eos_token) + 1 : 0);
    h.field(to_string(options.annotator.backend));
    if (options.annotator.backend == AnnotatorBackend::external_service) {
        h.field(options.annotator.endpoint);
        h.field(options.annotator.model);
    } else {
        for (const auto& rule : options.annotator.rules) {
            h.field(to_string(rule.label));
            h.update_u64(rule.match == MockRule::Match::starts_with ? 1 : 2);
            for (const auto& k : rule.keywords) h.field(k);
        }
        h.field(to_string(options.annotator.first_sentence_label));
        h.field(to_string(options.annotator.default_label));
    }
    return h.digest();
}

struct ManifestEntry {
    std::string run_id;
    std::uint64_t content_hash;
};

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries,
                    const std::vector<SweepFailure>& failures, bool complete) {
    ojson j;
    j["schema_version"] = 1;
    auto runs = ojson::array();
    for (const auto& e : entries) runs.push_back({{"run_id", e.run_id}, {"content_hash", hex64(e.content_hash)}});
    j["runs"] = std::move(runs);
    auto fails = ojson::array();
    for (const auto& f : failures) fails.push_back({{"run_id", f.run_id}, {"message", f.message}});
    j["failures"] = std::move(fails);
    j["complete"] = complete;
    write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

std::optional<SteeringRun> load_existing(const std::filesystem::path& file, std::uint64_t expected_inputs) {
    std::error_code ec;
    if (!std::filesystem::exists(file, ec)) return std::nullopt;
    try {
        auto run = run_from_json(read_file_text(file));
        if (run.inputs_hash != expected_inputs || !run.annotation) return std::nullopt;
        return run;
    } catch (const Error&) {
        return std::nullopt;  // unreadable or stale: recompute
    }
}

}  // namespace

SweepResult steering_sweep(const Weights& weights, const SteeringVectorBank& bank,
                           const LayerAttributionProfile& profile, std::span<const SweepTask> tasks,
                           const SweepOptions& options) {
    if (tasks.empty()) throw InvalidArgument("steering sweep needs at least one task");
    for (int s : options.signs) {
        if (s != 1 && s != -1) throw InvalidArgument("sweep signs must be +1 or -1");
    }
    for (double a : options.alphas) {
        if (!std::isfinite(a) || a < 0.0) throw InvalidArgument("sweep alphas must be finite and >= 0");
    }
    for (const auto& t : tasks) check_task_id(t.id);
    options.annotator.validate();

    const auto model_fp = weights_fingerprint(weights);
    const auto bank_fp = bank_content_hash(bank);
    const bool persist = !options.out_dir.empty();
    const auto run_dir = options.out_dir / "runs";

    SweepResult result;
    std::vector<ManifestEntry> manifest;
    auto one = [&](const SweepTask& task, const SteeringSpec& spec) -> bool {
        SteeringRun probe{task.id, spec, {}, {}, {}, {}, {}, 0.0, 0};
        const std::string id = probe.run_id();
        const auto key = inputs_hash(model_fp, bank_fp, spec, task, options);
        if (persist) {
            if (auto existing = load_existing(run_dir / (id + ".json"), key)) {
                manifest.push_back({id, run_content_hash(*existing)});
                result.runs.push_back(std::move(*existing));
                ++result.reused;
                return false;
            }
        }
        try {
            auto run = steer_generate(weights, bank, spec, task.id, task.prompt, options.generation);
            annotate_run(run, options.annotator, options.transport);
            run.inputs_hash = key;
            if (persist) {
                write_file_atomic(run_dir / (id + ".txt"), run.text);
                write_file_atomic(run_dir / (id + ".json"), run_to_json(run));
            }
            manifest.push_back({id, run_content_hash(run)});
            result.runs.push_back(std::move(run));
        } catch (const Error& e) {
            result.failures.push_back({id, e.what()});
        }
        ++result.computed;
        if (persist) write_manifest(options.out_dir, manifest, result.failures, false);
        return options.stop_after && options.stop_after(result.computed);
    };

    for (const auto& task : tasks) {
        SteeringSpec baseline;
        baseline.sign = 0;
        baseline.alpha = 0.0;
        baseline.category = BehaviorLabel::initializing;
        if (one(task, baseline)) {
            result.interrupted = true;
            break;
        }
        bool stop = false;
        for (auto category : options.categories) {
            std::optional<int> layer;
            try {
                layer = profile.selected_layer(category);
            } catch (const InvalidArgument& e) {
                for (int s : options.signs)
                    for (double a : options.alphas) {
                        SteeringRun probe{task.id, {category, 0, s, a, PositionFilter::generated()}, {}, {}, {}, {},
                                          {}, 0.0, 0};
                        result.failures.push_back({probe.run_id(), e.what()});
                    }
                continue;
            }
            for (int s : options.signs) {
                for (double a : options.alphas) {
                    if (one(task, SteeringSpec{category, *layer, s, a, PositionFilter::generated()})) {
                        stop = true;
                        break;
                    }
                }
                if (stop) break;
            }
            if (stop) break;
        }
        if (stop) {
            result.interrupted = true;
            break;
        }
    }
    if (persist) write_manifest(options.out_dir, manifest, result.failures, !result.interrupted);
    return result;
}

std::vector<SteeringRun> load_runs(const std::filesystem::path& dir) {
    const auto run_dir = dir / "runs";
    std::error_code ec;
    if (!std::filesystem::is_directory(run_dir, ec)) throw IoError("no run directory at '" + run_dir.string() + "'");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<SteeringRun> runs;
    for (const auto& f : files) {
        try {
            runs.push_back(run_from_json(read_file_text(f)));
        } catch (const FormatError& e) {
            throw FormatError(f.string() + ": " + e.what());
        }
    }
    return runs;
}

}  // namespace steerkit
