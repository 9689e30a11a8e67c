#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/steering.hpp"
#include "steerkit/tokenizer.hpp"
#include "support/corpora.hpp"
#include "support/planted.hpp"
#include "support/random_models.hpp"

using namespace steerkit;
using namespace steerkit::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / ("steerkit_steer_" + name + "_" + std::to_string(std::random_device{}()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

SteeringVectorBank random_bank(std::uint64_t seed, int d_model, int n_layers,
                               std::initializer_list<BehaviorLabel> categories) {
    std::mt19937_64 rng(seed);
    SteeringVectorBank bank(d_model, n_layers, 7, 9);
    for (auto c : categories) {
        for (int l = 0; l < n_layers; ++l) {
            SteeringVector v;
            v.category = c;
            v.layer = l;
            v.raw = random_vector(rng, d_model);
            double n = 0.0;
            for (double x : v.raw) n += x * x;
            n = std::sqrt(n);
            v.overall_mean_norm = 2.0;
            for (double x : v.raw) v.normalized.push_back(x / n * 2.0);
            v.d_plus_count = 1;
            v.d_minus_count = 1;
            bank.insert(v);
        }
    }
    return bank;
}

GenerateOptions short_generation(int n = 12) {
    GenerateOptions g;
    g.max_new_tokens = n;
    return g;
}

double marker_fraction(const SteeringRun& run) {
    REQUIRE(run.stats);
    return run.stats->tokens(BehaviorLabel::backtracking);
}

SteeringRun planted_run(const PlantedModel& m, int sign, double alpha) {
    const auto bank = m.bank();
    SteeringSpec spec{BehaviorLabel::backtracking, 0, sign, alpha, PositionFilter::generated()};
    auto run = steer_generate(m.weights, bank, spec, "p1", tokenizer::encode_task_prompt("t"), short_generation(120));
    annotate_run(run, AnnotatorConfig{});
    return run;
}

std::string manifest_of(const fs::path& dir) { return read_file_text(dir / "manifest.json"); }

}  // namespace

TEST_SUITE("steering") {

TEST_CASE("sign 0 reproduces plain generation") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto w = byte_model(seed);
        const auto bank = random_bank(seed, 8, 2, {BehaviorLabel::backtracking});
        const auto prompt = tokenizer::encode_task_prompt("count to three");
        SteeringSpec spec{BehaviorLabel::backtracking, 1, 0, 3.0, PositionFilter::generated()};
        const auto run = steer_generate(w, bank, spec, "t", prompt, short_generation());
        CHECK(run.output == generate(w, prompt, short_generation()));
        CHECK(run.text == tokenizer::decode(run.output));
        CHECK(run.prompt == prompt);
    }
}

TEST_CASE("alpha 0 matches the baseline") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto w = byte_model(seed);
        const auto bank = random_bank(seed + 100, 8, 2, {BehaviorLabel::uncertainty_estimation});
        const auto prompt = tokenizer::encode_task_prompt("think");
        SteeringSpec base{BehaviorLabel::uncertainty_estimation, 0, 0, 0.0, PositionFilter::generated()};
        for (int sign : {1, -1}) {
            SteeringSpec zero{BehaviorLabel::uncertainty_estimation, 0, sign, 0.0, PositionFilter::generated()};
            CHECK(steer_generate(w, bank, zero, "t", prompt, short_generation()).output ==
                  steer_generate(w, bank, base, "t", prompt, short_generation()).output);
        }
    }
}

TEST_CASE("steering_intervention carries the signed, scaled normalized vector") {
    const auto bank = random_bank(3, 8, 2, {BehaviorLabel::example_testing});
    SteeringSpec spec{BehaviorLabel::example_testing, 1, -1, 2.5, PositionFilter::generated()};
    const auto iv = steering_intervention(bank, spec);
    REQUIRE(iv);
    CHECK(iv->layer == 1);
    CHECK(iv->coefficient == -2.5);
    CHECK(iv->vector == bank.at(BehaviorLabel::example_testing, 1).normalized);
    CHECK(iv->filter.kind == PositionFilter::Kind::generated);
    spec.sign = 0;
    CHECK_FALSE(steering_intervention(bank, spec));
    spec.sign = 1;
    spec.category = BehaviorLabel::deduction;
    CHECK_THROWS_AS(steering_intervention(bank, spec), InvalidArgument);
}

TEST_CASE("spec validation") {
    SteeringSpec s;
    s.sign = 2;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.sign = 1;
    s.alpha = -0.5;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.alpha = std::nan("");
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.alpha = 1.0;
    s.layer = -1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.layer = 0;
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("opposite signs shift linear-readout logits antisymmetrically") {
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 20; ++trial) {
        ModelConfig c;
        c.n_layers = 2;
        c.d_model = 8;
        c.n_heads = 2;
        c.d_ff = 8;
        c.vocab_size = 11;
        c.max_seq_len = 12;
        c.final_norm = false;
        const auto w = random_weights(c, rng());
        const auto tokens = random_tokens(rng, c.vocab_size, 9);
        const auto u = random_vector(rng, c.d_model);
        const double alpha = 0.1 + 2.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const Intervention plus{c.n_layers - 1, u, alpha, PositionFilter::generated()};
        const Intervention minus{c.n_layers - 1, u, -alpha, PositionFilter::generated()};
        const auto base = forward(w, tokens, {}, 4);
        const auto p = forward(w, tokens, std::span(&plus, 1), 4);
        const auto m = forward(w, tokens, std::span(&minus, 1), 4);
        for (int pos = 0; pos < 9; ++pos) {
            for (int v = 0; v < c.vocab_size; ++v) {
                const double dp = p.logits(pos, v) - base.logits(pos, v);
                const double dm = m.logits(pos, v) - base.logits(pos, v);
                CHECK(dp == doctest::Approx(-dm).epsilon(1e-9).scale(1.0));
                if (pos < 4) CHECK(dp == 0.0);
            }
        }
    }
}

TEST_CASE("planted direction: positive steering raises the marker, negative lowers it") {
    const PlantedModel m;
    const auto base = planted_run(m, 0, 0.0);
    const auto plus = planted_run(m, 1, 1.0);
    const auto minus = planted_run(m, -1, 1.0);
    const double f0 = marker_fraction(base);
    CHECK(f0 > 0.0);
    CHECK(f0 < 1.0);
    CHECK(marker_fraction(plus) > f0);
    CHECK(marker_fraction(minus) < f0);
    CHECK(base.text.find("Wait.") != std::string::npos);
    CHECK(base.text.find("So it.") != std::string::npos);
}

TEST_CASE("planted direction: marker frequency is monotone in alpha") {
    const PlantedModel m;
    const std::vector<double> alphas{0.0, 0.5, 1.0, 2.0};
    for (int sign : {1, -1}) {
        std::vector<double> f;
        for (double a : alphas) f.push_back(marker_fraction(planted_run(m, sign, a)));
        for (std::size_t i = 1; i < f.size(); ++i) {
            if (sign > 0) {
                CHECK(f[i] >= f[i - 1]);
            } else {
                CHECK(f[i] <= f[i - 1]);
            }
        }
        CHECK(f.back() != f.front());
    }
}

TEST_CASE("planted marker: frequency over 200 tokens moves with the steering sign") {
    const PlantedMarkerModel m;
    const auto bank = m.bank();
    GenerateOptions g;
    g.max_new_tokens = 200;
    auto freq = [&](int sign, double alpha) {
        double total = 0.0;
        for (int k = 0; k < 5; ++k) {
            const auto prompt = tokenizer::encode_task_prompt("prompt number " + std::to_string(k * 7));
            SteeringSpec spec{BehaviorLabel::backtracking, 0, sign, alpha, PositionFilter::generated()};
            const auto run = steer_generate(m.weights, bank, spec, "m", prompt, g);
            CHECK(run.output.size() == 200);
            total += PlantedMarkerModel::marker_frequency(run.output);
        }
        return total / 5.0;
    };
    const double base = freq(0, 0.0);
    CHECK(base > 0.1);
    CHECK(base < 0.5);
    CHECK(freq(1, 1.0) - base >= 0.15);
    CHECK(base - freq(-1, 1.0) >= 0.10);
    double prev_up = base, prev_down = base;
    for (double a : {0.5, 1.0, 2.0}) {
        const double up = freq(1, a), down = freq(-1, a);
        CHECK(up >= prev_up);
        CHECK(down <= prev_down);
        prev_up = up;
        prev_down = down;
    }
}

TEST_CASE("run ids") {
    SteeringRun r;
    r.task_id = "math-01";
    r.spec = SteeringSpec{BehaviorLabel::uncertainty_estimation, 12, 1, 1.0, PositionFilter::generated()};
    CHECK(r.run_id() == "math-01.uncertainty-estimation.L12.plus.a1");
    r.spec.sign = -1;
    r.spec.alpha = 0.5;
    CHECK(r.run_id() == "math-01.uncertainty-estimation.L12.minus.a0.5");
    r.spec.sign = 0;
    CHECK(r.run_id() == "math-01.baseline");
}

TEST_CASE("task ids are restricted to a file-safe alphabet") {
    const auto w = byte_model(1);
    const auto bank = random_bank(1, 8, 2, {BehaviorLabel::backtracking});
    const auto prompt = tokenizer::encode_task_prompt("x");
    for (const std::string bad : {"", "a/b", "a.b", "a b", "../x"}) {
        CHECK_THROWS_AS(steer_generate(w, bank, SteeringSpec{}, bad, prompt, short_generation(2)), InvalidArgument);
    }
}

TEST_CASE("bank width must match the model") {
    const auto w = byte_model(1);
    const auto bank = random_bank(1, 6, 2, {BehaviorLabel::backtracking});
    SteeringSpec spec{BehaviorLabel::backtracking, 0, 1, 1.0, PositionFilter::generated()};
    CHECK_THROWS_AS(steer_generate(w, bank, spec, "t", tokenizer::encode_task_prompt("x"), short_generation(2)),
                    InvalidArgument);
}

TEST_CASE("run JSON round trip") {
    const PlantedModel m;
    auto run = planted_run(m, -1, 0.5);
    run.inputs_hash = 0xfeedbeef12345678ULL;
    run.wall_seconds = 0.25;
    const auto back = run_from_json(run_to_json(run));
    CHECK(back.task_id == run.task_id);
    CHECK(back.spec == run.spec);
    CHECK(back.prompt == run.prompt);
    CHECK(back.output == run.output);
    CHECK(back.text == run.text);
    REQUIRE(back.annotation);
    CHECK(back.annotation->segments == run.annotation->segments);
    REQUIRE(back.stats);
    CHECK(back.stats->token_fraction == run.stats->token_fraction);
    CHECK(back.inputs_hash == run.inputs_hash);
    CHECK(back.wall_seconds == run.wall_seconds);
    CHECK(run_to_json(back) == run_to_json(run));
    CHECK(run_content_hash(back) == run_content_hash(run));
    auto slower = run;
    slower.wall_seconds = 99.0;
    CHECK(run_content_hash(slower) == run_content_hash(run));
}

TEST_CASE("run JSON rejects malformed input") {
    const PlantedModel m;
    auto text = run_to_json(planted_run(m, 1, 1.0));
    CHECK_THROWS_AS(run_from_json("{"), FormatError);
    CHECK_THROWS_AS(run_from_json("{}"), FormatError);
    auto renamed = text;
    const auto at = renamed.find("p1.backtracking");
    REQUIRE(at != std::string::npos);
    renamed.replace(at, 2, "p2");
    CHECK_THROWS_AS(run_from_json(renamed), FormatError);
    auto bad_sign = text;
    const auto s = bad_sign.find("\"sign\": 1");
    REQUIRE(s != std::string::npos);
    bad_sign.replace(s, 9, "\"sign\": 5");
    CHECK_THROWS_AS(run_from_json(bad_sign), FormatError);
}

TEST_CASE("empty output annotates to an empty chain") {
    SteeringRun r;
    r.task_id = "e";
    annotate_run(r, AnnotatorConfig{});
    REQUIRE(r.annotation);
    CHECK(r.annotation->segments.empty());
    REQUIRE(r.stats);
    CHECK(r.stats->token_count == 0);
}

TEST_CASE("sweep cardinality") {
    const PlantedModel m;
    auto bank = m.bank(BehaviorLabel::backtracking);
    SteeringVector v = bank.at(BehaviorLabel::backtracking, 0);
    v.category = BehaviorLabel::uncertainty_estimation;
    bank.insert(v);
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking, BehaviorLabel::uncertainty_estimation});
    std::vector<SweepTask> tasks{{"a", tokenizer::encode_task_prompt("a")},
                                 {"b", tokenizer::encode_task_prompt("b")},
                                 {"c", tokenizer::encode_task_prompt("c")}};
    SweepOptions opt;
    opt.categories = {BehaviorLabel::backtracking, BehaviorLabel::uncertainty_estimation};
    opt.generation = short_generation(20);
    const auto r = steering_sweep(m.weights, bank, profile, tasks, opt);
    CHECK(r.runs.size() == 3 + 3 * 2 * 2);
    CHECK(r.computed == 15);
    CHECK(r.reused == 0);
    CHECK(r.failures.empty());
    CHECK_FALSE(r.interrupted);
    std::set<std::string> ids;
    int baselines = 0;
    for (const auto& run : r.runs) {
        ids.insert(run.run_id());
        baselines += run.spec.is_baseline();
        CHECK(run.annotation);
        CHECK(run.stats);
    }
    CHECK(ids.size() == r.runs.size());
    CHECK(baselines == 3);

    opt.alphas = {0.5, 1.0, 2.0};
    CHECK(steering_sweep(m.weights, bank, profile, tasks, opt).runs.size() == 3 + 3 * 2 * 2 * 3);

    opt.categories.clear();
    const auto only = steering_sweep(m.weights, bank, profile, tasks, opt);
    CHECK(only.runs.size() == 3);
    for (const auto& run : only.runs) CHECK(run.spec.is_baseline());
}

TEST_CASE("sweep records categories missing from the profile and continues") {
    const PlantedModel m;
    const auto bank = m.bank();
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking});
    std::vector<SweepTask> tasks{{"a", tokenizer::encode_task_prompt("a")}};
    SweepOptions opt;
    opt.categories = {BehaviorLabel::backtracking, BehaviorLabel::adding_knowledge};
    opt.generation = short_generation(10);
    const auto r = steering_sweep(m.weights, bank, profile, tasks, opt);
    CHECK(r.runs.size() == 3);
    REQUIRE(r.failures.size() == 2);
    CHECK(r.failures[0].message.find("adding-knowledge") != std::string::npos);
}

TEST_CASE("sweep rejects bad options") {
    const PlantedModel m;
    const auto bank = m.bank();
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking});
    std::vector<SweepTask> tasks{{"a", tokenizer::encode_task_prompt("a")}};
    SweepOptions opt;
    CHECK_THROWS_AS(steering_sweep(m.weights, bank, profile, {}, opt), InvalidArgument);
    opt.signs = {0};
    CHECK_THROWS_AS(steering_sweep(m.weights, bank, profile, tasks, opt), InvalidArgument);
    opt.signs = {1};
    opt.alphas = {-1.0};
    CHECK_THROWS_AS(steering_sweep(m.weights, bank, profile, tasks, opt), InvalidArgument);
    opt.alphas = {1.0};
    std::vector<SweepTask> bad{{"a/b", {}}};
    CHECK_THROWS_AS(steering_sweep(m.weights, bank, profile, bad, opt), InvalidArgument);
}

TEST_CASE("interrupted sweep resumes to the same manifest as an uninterrupted one") {
    const PlantedModel m;
    const auto bank = m.bank();
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking});
    std::vector<SweepTask> tasks{{"a", tokenizer::encode_task_prompt("a")},
                                 {"b", tokenizer::encode_task_prompt("bb")}};
    SweepOptions opt;
    opt.categories = {BehaviorLabel::backtracking};
    opt.generation = short_generation(30);

    TempDir full("full"), resumed("resumed");
    opt.out_dir = full.path;
    const auto straight = steering_sweep(m.weights, bank, profile, tasks, opt);
    CHECK(straight.computed == 6);

    for (int kill_at = 1; kill_at <= 5; ++kill_at) {
        fs::remove_all(resumed.path);
        opt.out_dir = resumed.path;
        opt.stop_after = [kill_at](int n) { return n >= kill_at; };
        const auto first = steering_sweep(m.weights, bank, profile, tasks, opt);
        CHECK(first.interrupted);
        CHECK(first.computed == kill_at);
        CHECK(manifest_of(resumed.path).find("\"complete\": false") != std::string::npos);

        opt.stop_after = nullptr;
        const auto second = steering_sweep(m.weights, bank, profile, tasks, opt);
        CHECK_FALSE(second.interrupted);
        CHECK(second.reused == kill_at);
        CHECK(second.computed == 6 - kill_at);
        CHECK(manifest_of(resumed.path) == manifest_of(full.path));
        for (const auto& run : straight.runs) {
            const auto id = run.run_id();
            CHECK(read_file_text(resumed.path / "runs" / (id + ".txt")) == run.text);
        }
    }

    // A third pass recomputes nothing.
    opt.out_dir = full.path;
    const auto again = steering_sweep(m.weights, bank, profile, tasks, opt);
    CHECK(again.computed == 0);
    CHECK(again.reused == 6);
}

TEST_CASE("changed inputs invalidate stored runs; baselines ignore the bank") {
    const PlantedModel m;
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking});
    std::vector<SweepTask> tasks{{"a", tokenizer::encode_task_prompt("a")}};
    SweepOptions opt;
    opt.categories = {BehaviorLabel::backtracking};
    opt.generation = short_generation(30);
    TempDir dir("inputs");
    opt.out_dir = dir.path;
    CHECK(steering_sweep(m.weights, m.bank(), profile, tasks, opt).computed == 3);

    auto other = m.bank();
    other.skipped.push_back({BehaviorLabel::deduction, std::nullopt, "test"});
    const auto r = steering_sweep(m.weights, other, profile, tasks, opt);
    CHECK(r.reused == 1);
    CHECK(r.computed == 2);
    CHECK(r.runs[0].spec.is_baseline());

    opt.generation = short_generation(31);
    CHECK(steering_sweep(m.weights, other, profile, tasks, opt).computed == 3);

    // A corrupt run file is recomputed.
    write_file_atomic(dir.path / "runs" / "a.baseline.json", std::string("not json"));
    const auto fixed = steering_sweep(m.weights, other, profile, tasks, opt);
    CHECK(fixed.computed == 1);
    CHECK(fixed.reused == 2);
}

TEST_CASE("baseline runs equal plain generation and are shared across categories") {
    const PlantedModel m;
    auto bank = m.bank();
    SteeringVector v = bank.at(BehaviorLabel::backtracking, 0);
    v.category = BehaviorLabel::example_testing;
    bank.insert(v);
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking, BehaviorLabel::example_testing});
    std::vector<SweepTask> tasks{{"a", tokenizer::encode_task_prompt("a")}};
    SweepOptions opt;
    opt.categories = {BehaviorLabel::backtracking, BehaviorLabel::example_testing};
    opt.generation = short_generation(40);
    const auto r = steering_sweep(m.weights, bank, profile, tasks, opt);
    int baselines = 0;
    for (const auto& run : r.runs) {
        if (!run.spec.is_baseline()) continue;
        ++baselines;
        CHECK(run.output == generate(m.weights, tasks[0].prompt, opt.generation));
    }
    CHECK(baselines == 1);
}

TEST_CASE("load_runs reads every stored run in id order") {
    const PlantedModel m;
    const auto profile = PlantedModel::profile({BehaviorLabel::backtracking});
    std::vector<SweepTask> tasks{{"b", tokenizer::encode_task_prompt("b")}, {"a", tokenizer::encode_task_prompt("a")}};
    SweepOptions opt;
    opt.categories = {BehaviorLabel::backtracking};
    opt.generation = short_generation(10);
    TempDir dir("load");
    opt.out_dir = dir.path;
    const auto r = steering_sweep(m.weights, m.bank(), profile, tasks, opt);
    const auto runs = load_runs(dir.path);
    REQUIRE(runs.size() == r.runs.size());
    for (std::size_t i = 1; i < runs.size(); ++i) CHECK(runs[i - 1].run_id() < runs[i].run_id());
    CHECK_THROWS_AS(load_runs(dir.path / "missing"), IoError);
}

}  // TEST_SUITE
