#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>

#include "json.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/pipeline.hpp"

namespace steerkit {

namespace {

class LineParser {
public:
    LineParser(std::string_view text, std::string where) : s_(text), where_(std::move(where)) {}

    void skip_space() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
    }
    bool at_end() {
        skip_space();
        return i_ >= s_.size() || s_[i_] == '#';
    }
    bool eat(char c) {
        skip_space();
        if (i_ < s_.size() && s_[i_] == c) {
            ++i_;
            return true;
        }
        return false;
    }
    [[noreturn]] void fail(const std::string& what) const { throw FormatError(where_ + ": " + what); }

    std::string ident() {
        skip_space();
        const auto start = i_;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
        if (start == i_) fail("expected a name");
        return std::string(s_.substr(start, i_ - start));
    }

    ConfigScalar scalar() {
        skip_space();
        if (i_ >= s_.size()) fail("missing value");
        if (s_[i_] == '"') return string();
        for (std::string_view word : {"true", "false"}) {
            if (s_.substr(i_, word.size()) == word) {
                i_ += word.size();
                return word == "true";
            }
        }
        const auto start = i_;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.' ||
                                  s_[i_] == '-' || s_[i_] == '+' || s_[i_] == '_')) {
            ++i_;
        }
        std::string token(s_.substr(start, i_ - start));
        std::erase(token, '_');
        char* end = nullptr;
        const double v = std::strtod(token.c_str(), &end);
        if (token.empty() || end != token.c_str() + token.size() || !std::isfinite(v)) {
            fail("cannot parse value \"" + std::string(s_.substr(start, std::max<std::size_t>(i_ - start, 1))) + "\"");
        }
        return v;
    }

    ConfigValue value() {
        if (!eat('[')) {
            auto v = scalar();
            return std::visit([](auto&& x) -> ConfigValue { return x; }, v);
        }
        std::vector<ConfigScalar> items;
        if (eat(']')) return items;
        do {
            items.push_back(scalar());
        } while (eat(','));
        if (!eat(']')) fail("expected ']' closing the array");
        return items;
    }

private:
    std::string string() {
        ++i_;  // opening quote
        std::string out;
        while (i_ < s_.size() && s_[i_] != '"') {
            char c = s_[i_++];
            if (c == '\\') {
                if (i_ >= s_.size()) break;
                const char e = s_[i_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(std::string("unknown escape \\") + e);
                }
            }
            out += c;
        }
        if (i_ >= s_.size()) fail("unterminated string");
        ++i_;
        return out;
    }

    std::string_view s_;
    std::string where_;
    std::size_t i_ = 0;
};

void parse_into(std::map<std::string, ConfigValue>& table, std::string_view text, std::string_view source,
                bool allow_redefine) {
    std::string section;
    std::set<std::string> seen;
    int line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        LineParser p(line, std::string(source) + ":" + std::to_string(line_no));
        if (p.at_end()) continue;
        if (p.eat('[')) {
            section = p.ident();
            if (!p.eat(']')) p.fail("expected ']' after section name");
            if (!p.at_end()) p.fail("unexpected text after section header");
            continue;
        }
        const auto key = p.ident();
        if (section.empty()) p.fail("key \"" + key + "\" appears before any [section]");
        if (!p.eat('=')) p.fail("expected '=' after \"" + key + "\"");
        auto v = p.value();
        if (!p.at_end()) p.fail("unexpected text after the value of \"" + key + "\"");
        const auto full = section + "." + key;
        if (!seen.insert(full).second || (!allow_redefine && table.count(full))) {
            p.fail("duplicate key \"" + full + "\"");
        }
        table[full] = std::move(v);
    }
}

struct Reader {
    std::map<std::string, ConfigValue> table;
    std::set<std::string> used;

    const ConfigValue* find(const std::string& key) {
        const auto it = table.find(key);
        if (it == table.end()) return nullptr;
        used.insert(key);
        return &it->second;
    }
    [[noreturn]] static void wrong(const std::string& key, const char* want) {
        throw FormatError("config key \"" + key + "\" must be " + want);
    }
    std::optional<std::string> string(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (const auto* s = std::get_if<std::string>(v)) return *s;
        wrong(key, "a string");
    }
    std::optional<double> number(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (const auto* d = std::get_if<double>(v)) return *d;
        wrong(key, "a number");
    }
    std::optional<long long> integer(const std::string& key) {
        const auto d = number(key);
        if (!d) return std::nullopt;
        if (*d != std::floor(*d) || std::abs(*d) > 9007199254740992.0) wrong(key, "an integer");
        return static_cast<long long>(*d);
    }
    std::optional<bool> boolean(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (const auto* b = std::get_if<bool>(v)) return *b;
        wrong(key, "true or false");
    }
    std::optional<std::vector<ConfigScalar>> array(const std::string& key) {
        const auto* v = find(key);
        if (!v) return std::nullopt;
        if (const auto* a = std::get_if<std::vector<ConfigScalar>>(v)) return *a;
        wrong(key, "an array");
    }
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

std::map<std::string, ConfigValue> parse_config_table(std::string_view text, std::string_view source) {
    std::map<std::string, ConfigValue> table;
    parse_into(table, text, source, false);
    return table;
}

void PipelineConfig::validate() const {
    if (weights.empty()) throw InvalidArgument("config: model.weights is required");
    if (tasks.empty()) throw InvalidArgument("config: tasks.file is required");
    if (root.empty()) throw InvalidArgument("config: output.root is required");
    if (heldout < 0) throw InvalidArgument("config: tasks.heldout must be >= 0");
    if (max_new_tokens < 1) throw InvalidArgument("config: generation.max_new_tokens must be >= 1");
    if (!std::isfinite(tau) || tau < 0.0 || tau > 1.0) throw InvalidArgument("config: attribution.tau must be in [0, 1]");
    for (int s : signs) {
        if (s != 1 && s != -1) throw InvalidArgument("config: steering.signs entries must be 1 or -1");
    }
    for (double a : alphas) {
        if (!std::isfinite(a) || a < 0.0) throw InvalidArgument("config: steering.alphas entries must be >= 0");
    }
    if (alphas.empty() || signs.empty()) throw InvalidArgument("config: steering.signs and steering.alphas must be non-empty");
    annotator.validate();
}

PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                            std::span<const std::string> overrides, std::string_view source) {
    Reader r;
    parse_into(r.table, text, source, false);
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        const auto dot = o.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
            throw FormatError("override \"" + o + "\" must look like section.key=value");
        }
        parse_into(r.table, "[" + o.substr(0, dot) + "]\n" + o.substr(dot + 1, eq - dot - 1) + " = " + o.substr(eq + 1),
                   "override \"" + o + "\"", true);
    }

    PipelineConfig c;
    if (auto v = r.string("model.weights")) c.weights = resolve(base_dir, *v);
    if (auto v = r.string("tasks.file")) c.tasks = resolve(base_dir, *v);
    if (auto v = r.integer("tasks.heldout")) c.heldout = static_cast<int>(*v);
    if (auto v = r.integer("tasks.split_seed")) {
        if (*v < 0) throw FormatError("config key \"tasks.split_seed\" must be >= 0");
        c.split_seed = static_cast<std::uint64_t>(*v);
    }
    if (auto v = r.string("output.root")) c.root = resolve(base_dir, *v);

    if (auto v = r.string("annotator.backend")) {
        try {
            c.annotator.backend = parse_backend(*v);
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("config key \"annotator.backend\": ") + e.what());
        }
    }
    if (auto v = r.string("annotator.endpoint")) c.annotator.endpoint = *v;
    if (auto v = r.string("annotator.model")) c.annotator.model = *v;
    if (auto v = r.string("annotator.token_env")) c.annotator.token_env = *v;
    if (auto v = r.integer("annotator.timeout_ms")) c.annotator.timeout = std::chrono::milliseconds(*v);
    if (auto v = r.integer("annotator.max_retries")) c.annotator.max_retries = static_cast<int>(*v);
    if (auto v = r.integer("annotator.max_in_flight")) c.annotator.max_in_flight = static_cast<int>(*v);

    if (auto v = r.integer("generation.max_new_tokens")) c.max_new_tokens = static_cast<int>(*v);

    if (auto v = r.number("attribution.tau")) c.tau = *v;
    try {
        if (auto v = r.string("attribution.metric")) c.attribution.metric = parse_attribution_metric(*v);
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("config key \"attribution.metric\": ") + e.what());
    }
    if (auto v = r.string("attribution.patch_vector")) {
        if (*v == "raw") {
            c.attribution.vector = PatchVector::raw;
        } else if (*v == "normalized") {
            c.attribution.vector = PatchVector::normalized;
        } else {
            throw FormatError("config key \"attribution.patch_vector\" must be \"raw\" or \"normalized\"");
        }
    }
    if (auto v = r.boolean("attribution.all_span_positions")) c.attribution.all_span_positions = *v;

    if (auto v = r.array("steering.categories")) {
        c.categories.clear();
        for (const auto& item : *v) {
            const auto* s = std::get_if<std::string>(&item);
            const auto label = s ? parse_label(*s) : std::nullopt;
            if (!label) throw FormatError("config key \"steering.categories\" holds an unknown behavior label");
            c.categories.push_back(*label);
        }
    }
    if (auto v = r.array("steering.signs")) {
        c.signs.clear();
        for (const auto& item : *v) {
            const auto* d = std::get_if<double>(&item);
            if (!d || (*d != 1.0 && *d != -1.0)) throw FormatError("config key \"steering.signs\" entries must be 1 or -1");
            c.signs.push_back(static_cast<int>(*d));
        }
    }
    if (auto v = r.array("steering.alphas")) {
        c.alphas.clear();
        for (const auto& item : *v) {
            const auto* d = std::get_if<double>(&item);
            if (!d) throw FormatError("config key \"steering.alphas\" entries must be numbers");
            c.alphas.push_back(*d);
        }
    }
    if (auto v = r.string("evaluate.basis")) {
        try {
            c.basis = parse_fraction_basis(*v);
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("config key \"evaluate.basis\": ") + e.what());
        }
    }

    for (const auto& [key, _] : r.table) {
        if (!r.used.count(key)) throw FormatError("unknown config key \"" + key + "\"");
    }
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(e.what());
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
    return parse_config(read_file_text(path), path.parent_path(), overrides, path.string());
}

std::string config_snapshot(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["model"] = {{"weights", c.weights.string()}};
    j["tasks"] = {{"file", c.tasks.string()}, {"heldout", c.heldout}, {"split_seed", c.split_seed}};
    j["output"] = {{"root", c.root.string()}};
    nlohmann::ordered_json a;
    a["backend"] = to_string(c.annotator.backend);
    if (c.annotator.backend == AnnotatorBackend::external_service) {
        a["endpoint"] = c.annotator.endpoint;
        a["model"] = c.annotator.model;
        a["token_env"] = c.annotator.token_env;
        a["timeout_ms"] = c.annotator.timeout.count();
        a["max_retries"] = c.annotator.max_retries;
        a["max_in_flight"] = c.annotator.max_in_flight;
    }
    j["annotator"] = std::move(a);
    j["generation"] = {{"max_new_tokens", c.max_new_tokens}};
    j["attribution"] = {{"tau", c.tau},
                        {"metric", to_string(c.attribution.metric)},
                        {"patch_vector", c.attribution.vector == PatchVector::raw ? "raw" : "normalized"},
                        {"all_span_positions", c.attribution.all_span_positions}};
    std::vector<std::string> cats;
    for (auto l : c.categories) cats.emplace_back(to_string(l));
    j["steering"] = {{"categories", cats}, {"signs", c.signs}, {"alphas", c.alphas}};
    j["evaluate"] = {{"basis", to_string(c.basis)}};
    return j.dump();
}

}  // namespace steerkit
