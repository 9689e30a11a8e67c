#include "steerkit/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <set>

#include "../common/json_codec.hpp"
#include "steerkit/corpus.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"
#include "steerkit/steering.hpp"
#include "steerkit/tokenizer.hpp"
#include "steerkit/weights_io.hpp"

namespace steerkit {

namespace fs = std::filesystem;
using detail::ojson;

namespace {

constexpr std::array<std::string_view, 7> kStageNames{"generate", "annotate", "extract", "attribute",
                                                      "steer",    "evaluate", "report"};
constexpr std::array<std::string_view, 3> kStatusNames{"pending", "complete", "failed"};

}  // namespace

std::string_view to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

Stage parse_stage(std::string_view name) {
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        if (kStageNames[i] == name) return static_cast<Stage>(i);
    }
    throw InvalidArgument("unknown stage \"" + std::string(name) + "\"");
}

std::string_view to_string(StageStatus status) { return kStatusNames[static_cast<std::size_t>(status)]; }

PipelineError::PipelineError(Stage stage, const std::string& message)
    : Error("stage " + std::string(to_string(stage)) + " failed: " + message), stage_(stage) {}

const StageRecord& RunManifest::at(Stage stage) const {
    for (const auto& s : stages)
        if (s.stage == stage) return s;
    throw InvalidArgument("manifest has no record for stage " + std::string(to_string(stage)));
}

StageRecord& RunManifest::at(Stage stage) {
    return const_cast<StageRecord&>(static_cast<const RunManifest&>(*this).at(stage));
}

std::string manifest_to_json(const RunManifest& m) {
    ojson j;
    j["schema_version"] = m.schema_version;
    j["tool_version"] = m.tool_version;
    j["config"] = m.config.empty() ? ojson::object() : ojson::parse(m.config);
    j["model_fingerprint"] = hex64(m.model_fingerprint);
    j["split"] = {{"seed", m.split_seed}, {"heldout_ids", m.heldout_ids}};
    auto stages = ojson::array();
    for (const auto& s : m.stages) {
        ojson r;
        r["name"] = to_string(s.stage);
        r["status"] = to_string(s.status);
        r["input_hash"] = hex64(s.input_hash);
        r["output_hash"] = hex64(s.output_hash);
        r["outputs"] = s.outputs;
        r["error"] = s.error;
        stages.push_back(std::move(r));
    }
    j["stages"] = std::move(stages);
    return j.dump(2) + "\n";
}

RunManifest manifest_from_json(std::string_view text) {
    try {
        const auto j = ojson::parse(text);
        RunManifest m;
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != kManifestSchemaVersion) {
            throw FormatError("unsupported manifest schema version " + std::to_string(m.schema_version));
        }
        m.tool_version = j.at("tool_version").get<std::string>();
        m.config = j.at("config").dump();
        m.model_fingerprint = parse_hex64(j.at("model_fingerprint").get<std::string>());
        m.split_seed = j.at("split").at("seed").get<std::uint64_t>();
        m.heldout_ids = j.at("split").at("heldout_ids").get<std::vector<std::string>>();
        for (const auto& r : j.at("stages")) {
            StageRecord s;
            try {
                s.stage = parse_stage(r.at("name").get<std::string>());
            } catch (const InvalidArgument& e) {
                throw FormatError(e.what());
            }
            const auto status = r.at("status").get<std::string>();
            const auto it = std::find(kStatusNames.begin(), kStatusNames.end(), status);
            if (it == kStatusNames.end()) throw FormatError("unknown stage status \"" + status + "\"");
            s.status = static_cast<StageStatus>(it - kStatusNames.begin());
            s.input_hash = parse_hex64(r.at("input_hash").get<std::string>());
            s.output_hash = parse_hex64(r.at("output_hash").get<std::string>());
            s.outputs = r.at("outputs").get<std::vector<std::string>>();
            s.error = r.at("error").get<std::string>();
            m.stages.push_back(std::move(s));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
}

std::uint64_t output_hash(const fs::path& root, std::span<const std::string> outputs) {
    Fnv1a64 h;
    h.update_u64(outputs.size());
    for (const auto& rel : outputs) {
        h.field(rel);
        std::error_code ec;
        if (!fs::is_regular_file(root / rel, ec)) {
            h.update_u64(~0ULL);
            continue;
        }
        const auto bytes = read_file_bytes(root / rel);
        if (rel.starts_with("steer/runs/") && rel.ends_with(".json")) {
            // Wall time differs between otherwise identical runs.
            try {
                h.update_u64(run_content_hash(run_from_json(std::string(bytes.begin(), bytes.end()))));
                continue;
            } catch (const Error&) {
            }
        }
        h.update_u64(bytes.size());
        h.update(bytes);
    }
    return h.digest();
}

namespace {

// Advisory lock: exclusive creation of root/.lock, removed on release.
class OutputLock {
public:
    explicit OutputLock(const fs::path& root) : path_(root / ".lock") {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            if (errno == EEXIST) {
                throw LockError("output root '" + root.string() + "' is locked by another run (" + path_.string() +
                                " exists; remove it if no run is active)");
            }
            throw IoError("cannot create lock file '" + path_.string() + "': " + std::strerror(errno));
        }
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
    }
    ~OutputLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
};

std::uint64_t annotator_identity(const AnnotatorConfig& a) {
    Fnv1a64 h;
    h.field(to_string(a.backend));
    if (a.backend == AnnotatorBackend::external_service) {
        h.field(a.endpoint).field(a.model);
    } else {
        for (const auto& rule : a.rules) {
            h.field(to_string(rule.label));
            h.update_u64(rule.match == MockRule::Match::starts_with ? 1 : 2);
            for (const auto& k : rule.keywords) h.field(k);
        }
        h.field(to_string(a.first_sentence_label)).field(to_string(a.default_label));
    }
    return h.digest();
}

struct Generation {
    std::string task_id;
    std::vector<Token> prompt;
    std::vector<Token> output;
};

std::vector<Generation> read_generations(const fs::path& file) {
    std::vector<Generation> out;
    const auto text = read_file_text(file);
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const auto line = std::string_view(text).substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("task_id").get<std::string>(), j.at("prompt").get<std::vector<Token>>(),
                           j.at("output").get<std::vector<Token>>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(file.string() + ": " + e.what());
        }
    }
    return out;
}

std::vector<AnnotatedChain> read_annotations(const fs::path& file) {
    std::vector<AnnotatedChain> out;
    const auto text = read_file_text(file);
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const auto line = std::string_view(text).substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        try {
            out.push_back(detail::chain_from_json(nlohmann::json::parse(line).at("chain")));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(file.string() + ": " + e.what());
        }
    }
    return out;
}

std::vector<std::string> list_files(const fs::path& root, const fs::path& dir) {
    std::vector<std::string> out;
    std::error_code ec;
    if (!fs::is_directory(root / dir, ec)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root / dir)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

class Runner {
public:
    Runner(const PipelineConfig& cfg, const PipelineOptions& opt) : cfg_(cfg), opt_(opt) {}

    PipelineResult run();

private:
    void log(const std::string& line) const {
        if (opt_.log) opt_.log(line);
    }
    std::uint64_t out_of(Stage s) const { return manifest_.at(s).output_hash; }
    std::uint64_t input_hash(Stage stage) const;
    std::vector<std::string> execute(Stage stage, bool& interrupted);
    std::vector<AnnotatedPrompt> extraction_corpus() const;
    std::vector<SteeringRun> steered_runs() const;
    void write_manifest() const {
        const auto text = manifest_to_json(manifest_);
        const auto path = cfg_.root / "manifest.json";
        std::error_code ec;
        if (fs::exists(path, ec) && read_file_text(path) == text) return;
        write_file_atomic(path, text);
    }

    std::vector<std::string> do_generate();
    std::vector<std::string> do_annotate();
    std::vector<std::string> do_extract();
    std::vector<std::string> do_attribute();
    std::vector<std::string> do_steer(bool& interrupted);
    std::vector<std::string> do_evaluate();
    std::vector<std::string> do_report();

    const PipelineConfig& cfg_;
    const PipelineOptions& opt_;
    Weights weights_;
    std::uint64_t model_fp_ = 0;
    std::vector<TaskRecord> extraction_, heldout_;
    int max_new_tokens_ = 0;
    RunManifest manifest_;
};

std::uint64_t Runner::input_hash(Stage stage) const {
    Fnv1a64 h;
    h.field(to_string(stage));
    // Chain to the upstream stage's inputs so a change anywhere upstream
    // reaches every later stage.
    if (stage != Stage::generate) h.update_u64(manifest_.at(static_cast<Stage>(static_cast<int>(stage) - 1)).input_hash);
    switch (stage) {
        case Stage::generate:
            h.update_u64(model_fp_).update_u64(tasks_hash(extraction_));
            h.update_u64(static_cast<std::uint64_t>(max_new_tokens_));
            break;
        case Stage::annotate:
            h.update_u64(out_of(Stage::generate)).update_u64(annotator_identity(cfg_.annotator));
            break;
        case Stage::extract:
            h.update_u64(model_fp_).update_u64(out_of(Stage::generate)).update_u64(out_of(Stage::annotate));
            for (auto c : cfg_.categories) h.field(to_string(c));
            break;
        case Stage::attribute:
            h.update_u64(model_fp_).update_u64(out_of(Stage::generate)).update_u64(out_of(Stage::annotate));
            h.update_u64(out_of(Stage::extract));
            h.field(std::to_string(cfg_.tau)).field(to_string(cfg_.attribution.metric));
            h.update_u64(cfg_.attribution.vector == PatchVector::raw ? 0 : 1);
            h.update_u64(cfg_.attribution.all_span_positions ? 1 : 0);
            break;
        case Stage::steer:
            h.update_u64(model_fp_).update_u64(out_of(Stage::extract)).update_u64(out_of(Stage::attribute));
            h.update_u64(tasks_hash(heldout_)).update_u64(static_cast<std::uint64_t>(max_new_tokens_));
            h.update_u64(annotator_identity(cfg_.annotator));
            for (auto c : cfg_.categories) h.field(to_string(c));
            for (int s : cfg_.signs) h.update_u64(static_cast<std::uint64_t>(s + 1));
            for (double a : cfg_.alphas) h.field(hex64(std::bit_cast<std::uint64_t>(a)));
            break;
        case Stage::evaluate:
            h.update_u64(out_of(Stage::steer)).field(to_string(cfg_.basis));
            break;
        case Stage::report:
            for (auto s : {Stage::annotate, Stage::extract, Stage::attribute, Stage::steer, Stage::evaluate})
                h.update_u64(out_of(s));
            break;
    }
    return h.digest();
}

std::vector<AnnotatedPrompt> Runner::extraction_corpus() const { return load_annotated_corpus(cfg_.root); }

std::vector<std::string> Runner::do_generate() {
    std::string out;
    GenerateOptions g;
    g.max_new_tokens = max_new_tokens_;
    g.eos_token = tokenizer::kEos;
    int done = 0;
    for (const auto& t : extraction_) {
        const auto prompt = tokenizer::encode_task_prompt(t.prompt);
        const auto output = generate(weights_, prompt, g);
        ojson j;
        j["task_id"] = t.id;
        j["prompt"] = prompt;
        j["output"] = output;
        out += j.dump() + "\n";
        if (++done % 25 == 0) log("generate: " + std::to_string(done) + "/" + std::to_string(extraction_.size()));
    }
    write_file_atomic(cfg_.root / "generate/generations.jsonl", out);
    return {"generate/generations.jsonl"};
}

std::vector<std::string> Runner::do_annotate() {
    const auto gens = read_generations(cfg_.root / "generate/generations.jsonl");
    std::vector<std::string> texts;
    std::vector<std::size_t> nonempty;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        auto text = tokenizer::decode(gens[i].output);
        if (!text.empty()) {
            nonempty.push_back(i);
            texts.push_back(std::move(text));
        }
    }
    const auto annotated = annotate_all(texts, cfg_.annotator, opt_.transport);
    std::vector<AnnotatedChain> chains(gens.size());
    for (std::size_t k = 0; k < nonempty.size(); ++k) chains[nonempty[k]] = annotated[k];
    std::string out;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        if (chains[i].source.model.empty()) chains[i].source.model = std::string(to_string(cfg_.annotator.backend));
        chains[i].source.task_id = gens[i].task_id;
        ojson j;
        j["task_id"] = gens[i].task_id;
        j["chain"] = detail::chain_to_json(chains[i]);
        out += j.dump() + "\n";
    }
    write_file_atomic(cfg_.root / "annotate/annotations.jsonl", out);
    return {"annotate/annotations.jsonl"};
}

std::vector<std::string> Runner::do_extract() {
    const auto corpus = extraction_corpus();
    std::vector<BehaviorLabel> cats(kSteeredLabels.begin(), kSteeredLabels.end());
    for (auto c : cfg_.categories)
        if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
    const auto bank = build_bank(weights_, corpus, cats);
    for (const auto& s : bank.skipped) {
        log("extract: skipped " + std::string(to_string(s.category)) +
            (s.layer ? " layer " + std::to_string(*s.layer) : std::string()) + ": " + s.reason);
    }
    save_bank(bank, cfg_.root / "extract/bank.stkb");
    return {"extract/bank.stkb"};
}

std::vector<std::string> Runner::do_attribute() {
    const auto corpus = extraction_corpus();
    const auto bank = load_bank(cfg_.root / "extract/bank.stkb");
    const auto profile = attribute(weights_, corpus, bank, cfg_.tau, cfg_.attribution);
    for (const auto& c : profile.categories) {
        log("attribute: " + std::string(to_string(c.category)) + " -> layer " + std::to_string(c.selection.layer) +
            (c.selection.degraded ? " (every layer screened out)" : ""));
    }
    for (const auto& [c, why] : profile.skipped) log("attribute: skipped " + std::string(to_string(c)) + ": " + why);
    save_profile(profile, cfg_.root / "attribute/profile.json");
    return {"attribute/profile.json"};
}

std::vector<std::string> Runner::do_steer(bool& interrupted) {
    const auto bank = load_bank(cfg_.root / "extract/bank.stkb");
    const auto profile = load_profile(cfg_.root / "attribute/profile.json");
    std::vector<SweepTask> tasks;
    for (const auto& t : heldout_) tasks.push_back({t.id, tokenizer::encode_task_prompt(t.prompt)});
    if (tasks.empty()) throw InvalidArgument("the heldout split is empty; set tasks.heldout > 0");
    SweepOptions o;
    o.categories.clear();
    for (auto c : cfg_.categories)
        if (profile.find(c)) o.categories.push_back(c);
        else log("steer: no selected layer for " + std::string(to_string(c)) + "; not steered");
    o.signs = cfg_.signs;
    o.alphas = cfg_.alphas;
    o.generation.max_new_tokens = max_new_tokens_;
    o.generation.eos_token = tokenizer::kEos;
    o.annotator = cfg_.annotator;
    o.transport = opt_.transport;
    o.out_dir = cfg_.root / "steer";
    const std::size_t total = tasks.size() * (1 + o.categories.size() * o.signs.size() * o.alphas.size());
    o.stop_after = [&](int computed) {
        if (computed % 25 == 0) log("steer: computed " + std::to_string(computed) + " of up to " + std::to_string(total));
        return opt_.steer_stop_after && opt_.steer_stop_after(computed);
    };
    const auto result = steering_sweep(weights_, bank, profile, tasks, o);
    log("steer: " + std::to_string(result.computed) + " computed, " + std::to_string(result.reused) + " reused, " +
        std::to_string(result.failures.size()) + " failed");
    if (result.interrupted) {
        interrupted = true;
        return {};
    }
    // Drop run files left over from earlier configurations.
    std::set<std::string> keep{"steer/manifest.json"};
    for (const auto& r : result.runs) {
        keep.insert("steer/runs/" + r.run_id() + ".json");
        keep.insert("steer/runs/" + r.run_id() + ".txt");
    }
    for (const auto& f : list_files(cfg_.root, "steer")) {
        if (!keep.count(f)) fs::remove(cfg_.root / f);
    }
    return list_files(cfg_.root, "steer");
}

std::vector<SteeringRun> Runner::steered_runs() const {
    const auto m = nlohmann::json::parse(read_file_text(cfg_.root / "steer/manifest.json"));
    std::vector<SteeringRun> runs;
    for (const auto& r : m.at("runs")) {
        const auto id = r.at("run_id").get<std::string>();
        runs.push_back(run_from_json(read_file_text(cfg_.root / "steer/runs" / (id + ".json"))));
    }
    return runs;
}

std::vector<std::string> Runner::do_evaluate() {
    const auto runs = steered_runs();
    const auto effects = all_steering_effects(runs, cfg_.basis);
    write_file_atomic(cfg_.root / "evaluate/effects.json", effects_to_json(effects));
    const auto check = sign_check(effects);
    ojson j;
    j["schema_version"] = kReportSchemaVersion;
    j["basis"] = to_string(cfg_.basis);
    auto cats = ojson::array();
    for (const auto& [c, pass] : check.categories) {
        cats.push_back({{"category", to_string(c)}, {"pass", pass}});
        log(std::string("evaluate: ") + std::string(to_string(c)) + (pass ? " moves with the steering sign" : " does not"));
    }
    j["categories"] = std::move(cats);
    j["passing"] = check.passing;
    j["total"] = check.total;
    write_file_atomic(cfg_.root / "evaluate/sign_check.json", j.dump(2) + "\n");
    return {"evaluate/effects.json", "evaluate/sign_check.json"};
}

std::vector<std::string> Runner::do_report() {
    const auto profile = load_profile(cfg_.root / "attribute/profile.json");
    const auto bank = load_bank(cfg_.root / "extract/bank.stkb");
    ReportInputs in;
    in.profile = &profile;
    if (!profile.categories.empty()) in.cosines = cosine_matrix(bank, profile);
    in.effects = effects_from_json(read_file_text(cfg_.root / "evaluate/effects.json"));

    std::vector<std::pair<std::string, std::vector<AnnotatedChain>>> corpora;
    corpora.emplace_back("extraction", read_annotations(cfg_.root / "annotate/annotations.jsonl"));
    std::map<std::string, std::vector<AnnotatedChain>> by_config;
    for (const auto& r : steered_runs()) {
        if (!r.annotation) continue;
        std::string name = "baseline";
        if (!r.spec.is_baseline()) {
            char alpha[32];
            std::snprintf(alpha, sizeof alpha, "%g", r.spec.alpha);
            name = std::string(to_string(r.spec.category)) + (r.spec.sign > 0 ? " +" : " -") + alpha;
        }
        by_config[name].push_back(*r.annotation);
    }
    for (auto& [name, chains] : by_config) corpora.emplace_back(name, std::move(chains));
    for (const auto& [name, chains] : corpora) {
        if (!chains.empty()) in.corpora.push_back(summarize_corpus(name, chains));
    }

    std::error_code ec;
    fs::remove_all(cfg_.root / "report", ec);
    std::vector<std::string> out;
    for (const auto& f : emit_report(in, cfg_.root / "report")) out.push_back("report/" + f);
    return out;
}

std::vector<std::string> Runner::execute(Stage stage, bool& interrupted) {
    switch (stage) {
        case Stage::generate: return do_generate();
        case Stage::annotate: return do_annotate();
        case Stage::extract: return do_extract();
        case Stage::attribute: return do_attribute();
        case Stage::steer: return do_steer(interrupted);
        case Stage::evaluate: return do_evaluate();
        case Stage::report: return do_report();
    }
    return {};
}

PipelineResult Runner::run() {
    cfg_.validate();
    std::error_code ec;
    if (!fs::is_regular_file(cfg_.weights, ec)) throw IoError("model weights not found: '" + cfg_.weights.string() + "'");
    if (!fs::is_regular_file(cfg_.tasks, ec)) throw IoError("task file not found: '" + cfg_.tasks.string() + "'");
    weights_ = load_weights(cfg_.weights);
    model_fp_ = weights_fingerprint(weights_);
    auto tasks = load_tasks(cfg_.tasks);
    const bool file_splits = std::all_of(tasks.begin(), tasks.end(), [](const auto& t) { return t.split.has_value(); });
    if (!file_splits) assign_splits(tasks, cfg_.heldout, cfg_.split_seed);
    extraction_ = tasks_in(tasks, TaskSplit::extraction);
    heldout_ = tasks_in(tasks, TaskSplit::heldout);
    if (extraction_.empty()) throw InvalidArgument("the extraction split is empty");

    std::size_t longest = 0;
    for (const auto& t : tasks) longest = std::max(longest, tokenizer::encode_task_prompt(t.prompt).size());
    const int room = weights_.config.max_seq_len - static_cast<int>(longest);
    if (room < 1) throw ContextOverflow("the longest task prompt fills the model's context window");
    max_new_tokens_ = std::min(cfg_.max_new_tokens, room);
    if (max_new_tokens_ < cfg_.max_new_tokens) {
        log("generation budget clamped to " + std::to_string(max_new_tokens_) + " tokens by the context window");
    }

    fs::create_directories(cfg_.root);
    OutputLock lock(cfg_.root);

    RunManifest previous;
    const auto manifest_path = cfg_.root / "manifest.json";
    if (fs::exists(manifest_path, ec)) {
        try {
            previous = manifest_from_json(read_file_text(manifest_path));
        } catch (const FormatError& e) {
            log(std::string("ignoring unreadable manifest: ") + e.what());
        }
    }
    manifest_.config = config_snapshot(cfg_);
    manifest_.model_fingerprint = model_fp_;
    manifest_.split_seed = cfg_.split_seed;
    for (const auto& t : heldout_) manifest_.heldout_ids.push_back(t.id);
    std::sort(manifest_.heldout_ids.begin(), manifest_.heldout_ids.end());
    for (auto s : kAllStages) {
        StageRecord rec;
        rec.stage = s;
        for (const auto& p : previous.stages)
            if (p.stage == s) rec = p;
        manifest_.stages.push_back(rec);
    }

    PipelineResult result;
    for (auto stage : kAllStages) {
        auto& rec = manifest_.at(stage);
        const auto input = input_hash(stage);
        const bool current = rec.status == StageStatus::complete && rec.input_hash == input &&
                             output_hash(cfg_.root, rec.outputs) == rec.output_hash;
        if (opt_.only && stage != *opt_.only) {
            if (stage < *opt_.only && !current) {
                throw PipelineError(*opt_.only, "upstream stage " + std::string(to_string(stage)) +
                                                    " is not complete for this configuration");
            }
            if (stage > *opt_.only) break;
            continue;
        }
        if (current) {
            result.skipped.push_back(stage);
            log(std::string(to_string(stage)) + ": up to date");
            continue;
        }
        log(std::string(to_string(stage)) + ": running");
        rec.status = StageStatus::pending;
        rec.input_hash = input;
        rec.error.clear();
        bool interrupted = false;
        try {
            auto outputs = execute(stage, interrupted);
            std::sort(outputs.begin(), outputs.end());
            rec.outputs = std::move(outputs);
        } catch (const Error& e) {
            rec.status = StageStatus::failed;
            rec.error = e.what();
            write_manifest();
            throw PipelineError(stage, e.what());
        }
        result.ran.push_back(stage);
        if (interrupted) {
            rec.error = "interrupted";
            rec.outputs.clear();
            write_manifest();
            result.interrupted = true;
            break;
        }
        rec.output_hash = output_hash(cfg_.root, rec.outputs);
        rec.status = StageStatus::complete;
        write_manifest();
    }
    write_manifest();
    result.manifest = manifest_;
    return result;
}

}  // namespace

std::vector<AnnotatedPrompt> load_annotated_corpus(const fs::path& dir) {
    auto pick = [&](const char* sub, const char* name) {
        std::error_code ec;
        const auto nested = dir / sub / name;
        return fs::is_regular_file(nested, ec) ? nested : dir / name;
    };
    const auto gens = read_generations(pick("generate", "generations.jsonl"));
    const auto chains = read_annotations(pick("annotate", "annotations.jsonl"));
    if (gens.size() != chains.size()) throw FormatError("generations and annotations differ in length");
    std::vector<AnnotatedPrompt> corpus;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        AnnotatedPrompt p;
        p.id = gens[i].task_id;
        p.tokens = gens[i].prompt;
        p.prompt_length = static_cast<int>(p.tokens.size());
        // Special tokens have no text; the corpus holds the text's bytes.
        const auto body = tokenizer::encode(tokenizer::decode(gens[i].output));
        p.tokens.insert(p.tokens.end(), body.begin(), body.end());
        p.chain = chains[i];
        corpus.push_back(std::move(p));
    }
    return corpus;
}

PipelineResult run_pipeline(const PipelineConfig& config, const PipelineOptions& options) {
    return Runner(config, options).run();
}

}  // namespace steerkit
