// steerkit command-line entry point.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "steerkit/analysis.hpp"
#include "steerkit/attribution.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"
#include "steerkit/pipeline.hpp"
#include "steerkit/reference.hpp"
#include "steerkit/steering.hpp"
#include "steerkit/tokenizer.hpp"
#include "steerkit/weights_io.hpp"

using namespace steerkit;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailed = 1, kInterrupted = 3 };

void log_line(std::string_view line) { std::cerr << line << '\n'; }

struct ConfigArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string annotator;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a, bool required) {
    auto* opt = cmd->add_option("--config", a.config, "pipeline config file")->check(CLI::ExistingFile);
    if (required) opt->required();
    cmd->add_option("--set", a.sets, "override a config key: section.key=value (repeatable)");
    cmd->add_option("--annotator", a.annotator, "annotator backend")->check(CLI::IsMember({"external", "mock"}));
}

PipelineConfig load(const ConfigArgs& a) {
    auto sets = a.sets;
    if (!a.annotator.empty()) sets.push_back("annotator.backend=\"" + a.annotator + "\"");
    return load_config(a.config, sets);
}

int run_stages(const ConfigArgs& a, std::optional<Stage> only) {
    PipelineOptions opt;
    opt.only = only;
    opt.log = log_line;
    const auto result = run_pipeline(load(a), opt);
    std::cout << "ran " << result.ran.size() << " stage(s), skipped " << result.skipped.size() << '\n';
    if (result.interrupted) {
        std::cout << "steering sweep interrupted; rerun to resume\n";
        return kInterrupted;
    }
    return kOk;
}

std::vector<BehaviorLabel> parse_categories(const std::vector<std::string>& names) {
    std::vector<BehaviorLabel> out;
    for (const auto& n : names) {
        const auto l = parse_label(n);
        if (!l) throw InvalidArgument("unknown behavior label \"" + n + "\"");
        out.push_back(*l);
    }
    return out;
}

std::vector<int> parse_signs(const std::string& text) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find(',', start);
        if (end == std::string::npos) end = text.size();
        const auto s = text.substr(start, end - start);
        if (s == "+" || s == "+1" || s == "1") {
            out.push_back(+1);
        } else if (s == "-" || s == "-1") {
            out.push_back(-1);
        } else {
            throw InvalidArgument("--signs entries must be + or -, got \"" + s + "\"");
        }
        start = end + 1;
    }
    return out;
}

int tasks_validate(const std::string& path) {
    const auto tasks = load_tasks(path);
    int held = 0;
    for (const auto& t : tasks) held += t.split == TaskSplit::heldout;
    std::cout << path << ": " << tasks.size() << " tasks";
    if (held) std::cout << " (" << held << " heldout)";
    std::cout << '\n';
    for (const auto& [name, n] : category_counts(tasks)) std::cout << "  " << name << ": " << n << '\n';
    return kOk;
}

struct ExtractArgs {
    std::string corpus, model, out;
    std::vector<std::string> categories;
};

int extract_standalone(const ExtractArgs& a) {
    const auto weights = load_weights(a.model);
    const auto corpus = load_annotated_corpus(a.corpus);
    auto cats = a.categories.empty() ? std::vector<BehaviorLabel>(kSteeredLabels.begin(), kSteeredLabels.end())
                                     : parse_categories(a.categories);
    const auto bank = build_bank(weights, corpus, cats);
    for (const auto& s : bank.skipped) log_line("skipped " + std::string(to_string(s.category)) + ": " + s.reason);
    save_bank(bank, a.out);
    std::cout << "wrote " << a.out << '\n';
    return kOk;
}

struct AttributeArgs {
    std::string bank, corpus, model, out;
    double tau = kDefaultScreenTau;
    std::string metric;
};

int attribute_standalone(const AttributeArgs& a) {
    const auto bank = load_bank(a.bank);
    const auto weights = load_weights(a.model);
    if (weights_fingerprint(weights) != bank.model_fingerprint()) {
        throw InvalidArgument("bank '" + a.bank + "' was not extracted from model '" + a.model + "'");
    }
    AttributionOptions opt;
    if (!a.metric.empty()) opt.metric = parse_attribution_metric(a.metric);
    const auto profile = attribute(weights, load_annotated_corpus(a.corpus), bank, a.tau, opt);
    for (const auto& c : profile.categories) {
        std::cout << to_string(c.category) << ": layer " << c.selection.layer << (c.selection.degraded ? " (degraded)" : "")
                  << '\n';
    }
    save_profile(profile, a.out);
    return kOk;
}

struct SteerArgs {
    std::string bank, profile, tasks, model, out, annotator = "mock", signs = "+,-", split;
    std::vector<double> alphas{kDefaultSteeringAlpha};
    std::vector<std::string> categories;
    int max_new_tokens = kDefaultMaxNewTokens;
};

int steer_standalone(const SteerArgs& a) {
    const auto weights = load_weights(a.model);
    const auto bank = load_bank(a.bank);
    const auto profile = load_profile(a.profile);
    auto records = load_tasks(a.tasks);
    if (!a.split.empty()) {
        records = tasks_in(records, a.split == "heldout" ? TaskSplit::heldout : TaskSplit::extraction);
    }
    std::vector<SweepTask> tasks;
    for (const auto& t : records) tasks.push_back({t.id, tokenizer::encode_task_prompt(t.prompt)});
    SweepOptions o;
    if (!a.categories.empty()) o.categories = parse_categories(a.categories);
    o.signs = parse_signs(a.signs);
    o.alphas = a.alphas;
    o.generation.max_new_tokens = a.max_new_tokens;
    o.generation.eos_token = tokenizer::kEos;
    o.annotator.backend = parse_backend(a.annotator);
    o.out_dir = a.out;
    const auto r = steering_sweep(weights, bank, profile, tasks, o);
    std::cout << r.computed << " computed, " << r.reused << " reused, " << r.failures.size() << " failed\n";
    for (const auto& f : r.failures) log_line(f.run_id + ": " + f.message);
    return r.failures.empty() ? kOk : kFailed;
}

struct EvaluateArgs {
    std::string runs, out, basis = "tokens";
};

int evaluate_standalone(const EvaluateArgs& a) {
    const auto effects = all_steering_effects(load_runs(a.runs), parse_fraction_basis(a.basis));
    for (const auto& e : effects) {
        char line[160];
        std::snprintf(line, sizeof line, "%-24s %c a=%-6g delta=%+.6f (%zu tasks)", std::string(to_string(e.category)).c_str(),
                      e.sign > 0 ? '+' : '-', e.alpha, e.delta, e.per_task.size());
        std::cout << line << '\n';
    }
    const auto check = sign_check(effects);
    std::cout << check.passing << " of " << check.total << " categories move with the steering sign\n";
    if (!a.out.empty()) write_file_atomic(a.out, effects_to_json(effects));
    return kOk;
}

struct TrainArgs {
    std::string tasks, out;
    int steps = ReferenceTrainingOptions{}.steps;
    std::uint64_t seed = 1;
};

int train_reference(const TrainArgs& a) {
    const auto tasks = load_tasks(a.tasks);
    ReferenceTrainingOptions o;
    o.steps = a.steps;
    o.seed = a.seed;
    o.fit.checkpoint_interval = std::max(10, a.steps / 5);
    const auto r = train_reference_model(tasks, o);
    for (const auto& c : r.report.checkpoints) std::cout << "step " << c.step << " loss " << c.loss << '\n';
    save_weights(r.weights, a.out);
    std::cout << "wrote " << a.out << " (fingerprint " << hex64(weights_fingerprint(r.weights)) << ")\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerkit: behavior steering vectors for a small reasoning model"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    auto* tasks_cmd = app.add_subcommand("tasks", "task file utilities");
    tasks_cmd->require_subcommand(1);
    std::string tasks_path;
    auto* validate_cmd = tasks_cmd->add_subcommand("validate", "check a task file and print per-category counts");
    validate_cmd->add_option("file", tasks_path, "task JSONL file")->required()->check(CLI::ExistingFile);

    ConfigArgs run_args;
    auto* run_cmd = app.add_subcommand("run", "run every stage whose inputs changed");
    add_config_options(run_cmd, run_args, true);

    std::map<Stage, std::pair<CLI::App*, ConfigArgs>> stage_cmds;
    const std::map<Stage, std::string> stage_help{
        {Stage::generate, "generate reasoning chains for the extraction tasks"},
        {Stage::annotate, "annotate the generated chains"},
        {Stage::extract, "build the steering vector bank"},
        {Stage::attribute, "score layers and select one per category"},
        {Stage::steer, "run the steering sweep over heldout tasks"},
        {Stage::evaluate, "compute steering effects"},
        {Stage::report, "emit report.json, tables and figures"},
    };
    for (auto s : kAllStages) {
        auto* cmd = app.add_subcommand(std::string(to_string(s)), stage_help.at(s));
        stage_cmds[s].first = cmd;
    }
    for (auto& [s, entry] : stage_cmds) {
        const bool standalone = s == Stage::extract || s == Stage::attribute || s == Stage::steer || s == Stage::evaluate;
        add_config_options(entry.first, entry.second, !standalone);
    }

    ExtractArgs ex;
    auto* extract_cmd = stage_cmds[Stage::extract].first;
    extract_cmd->add_option("--corpus", ex.corpus, "directory with generations.jsonl and annotations.jsonl");
    extract_cmd->add_option("--model", ex.model, "model weights");
    extract_cmd->add_option("--out", ex.out, "bank file to write");
    extract_cmd->add_option("--categories", ex.categories, "behavior labels");

    AttributeArgs at;
    auto* attribute_cmd = stage_cmds[Stage::attribute].first;
    attribute_cmd->add_option("--bank", at.bank, "bank file");
    attribute_cmd->add_option("--corpus", at.corpus, "annotated corpus directory");
    attribute_cmd->add_option("--model", at.model, "model weights");
    attribute_cmd->add_option("--tau", at.tau, "screening threshold")->check(CLI::Range(0.0, 1.0));
    attribute_cmd->add_option("--metric", at.metric, "next_token or clean_prediction");
    attribute_cmd->add_option("--out", at.out, "profile.json to write");

    SteerArgs st;
    auto* steer_cmd = stage_cmds[Stage::steer].first;
    steer_cmd->add_option("--bank", st.bank, "bank file");
    steer_cmd->add_option("--profile", st.profile, "profile.json");
    steer_cmd->add_option("--tasks", st.tasks, "task JSONL file");
    steer_cmd->add_option("--split", st.split, "use only this split of the task file")
        ->check(CLI::IsMember({"extraction", "heldout"}));
    steer_cmd->add_option("--model", st.model, "model weights");
    steer_cmd->add_option("--alpha", st.alphas, "steering strength (repeatable)");
    steer_cmd->add_option("--signs", st.signs, "comma-separated signs, e.g. +,-");
    steer_cmd->add_option("--categories", st.categories, "behavior labels");
    steer_cmd->add_option("--max-new-tokens", st.max_new_tokens, "generation budget")->check(CLI::PositiveNumber);
    steer_cmd->add_option("--out", st.out, "run directory");

    EvaluateArgs ev;
    auto* evaluate_cmd = stage_cmds[Stage::evaluate].first;
    evaluate_cmd->add_option("--runs", ev.runs, "run directory written by steer");
    evaluate_cmd->add_option("--basis", ev.basis, "tokens or sentences")->check(CLI::IsMember({"tokens", "sentences"}));
    evaluate_cmd->add_option("--out", ev.out, "effects.json to write");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train-reference", "train the bundled reference model");
    train_cmd->add_option("--tasks", tr.tasks, "task JSONL file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", tr.out, "weights file to write")->required();
    train_cmd->add_option("--steps", tr.steps, "optimizer steps")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--seed", tr.seed, "training seed");

    CLI11_PARSE(app, argc, argv);

    auto need = [](bool ok, const char* what) {
        if (!ok) throw InvalidArgument(std::string("missing ") + what + " (or pass --config)");
    };
    try {
        if (validate_cmd->parsed()) return tasks_validate(tasks_path);
        if (run_cmd->parsed()) return run_stages(run_args, std::nullopt);
        if (train_cmd->parsed()) return train_reference(tr);
        for (auto& [s, entry] : stage_cmds) {
            if (!entry.first->parsed()) continue;
            if (!entry.second.config.empty()) return run_stages(entry.second, s);
            switch (s) {
                case Stage::extract:
                    need(!ex.corpus.empty() && !ex.model.empty() && !ex.out.empty(), "--corpus, --model or --out");
                    return extract_standalone(ex);
                case Stage::attribute:
                    need(!at.bank.empty() && !at.corpus.empty() && !at.model.empty() && !at.out.empty(),
                         "--bank, --corpus, --model or --out");
                    return attribute_standalone(at);
                case Stage::steer:
                    need(!st.bank.empty() && !st.profile.empty() && !st.tasks.empty() && !st.model.empty() &&
                             !st.out.empty(),
                         "--bank, --profile, --tasks, --model or --out");
                    if (!entry.second.annotator.empty()) st.annotator = entry.second.annotator;
                    return steer_standalone(st);
                case Stage::evaluate:
                    need(!ev.runs.empty(), "--runs");
                    return evaluate_standalone(ev);
                default:
                    break;
            }
        }
    } catch (const PipelineError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailed;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailed;
    }
    return kOk;
}
