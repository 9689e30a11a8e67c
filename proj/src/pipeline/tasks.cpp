#include "steerkit/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include "json.hpp"
#include "steerkit/errors.hpp"
#include "steerkit/fileio.hpp"
#include "steerkit/hash.hpp"

namespace steerkit {

std::optional<int> task_category_index(std::string_view name) {
    for (std::size_t i = 0; i < kTaskCategories.size(); ++i) {
        if (kTaskCategories[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
}

std::string_view to_string(TaskSplit split) { return split == TaskSplit::extraction ? "extraction" : "heldout"; }

namespace {

std::string field(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw FormatError(where + ": missing \"" + key + "\"");
    if (!j[key].is_string()) throw FormatError(where + ": \"" + key + "\" must be a string");
    auto v = j[key].get<std::string>();
    if (v.empty()) throw FormatError(where + ": \"" + key + "\" is empty");
    return v;
}

}  // namespace

std::vector<TaskRecord> parse_tasks(std::string_view text, std::string_view source) {
    std::vector<TaskRecord> out;
    std::set<std::string> ids;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        const std::string where = std::string(source) + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": malformed JSON: " + e.what());
        }
        if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
        TaskRecord t;
        t.id = field(j, "id", where);
        t.category = field(j, "category", where);
        t.prompt = field(j, "prompt", where);
        for (char c : t.id) {
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') {
                throw FormatError(where + ": id \"" + t.id + "\" may only contain letters, digits, '-' and '_'");
            }
        }
        if (!task_category_index(t.category)) {
            throw FormatError(where + ": unknown category \"" + t.category + "\"");
        }
        if (!ids.insert(t.id).second) throw FormatError(where + ": duplicate id \"" + t.id + "\"");
        if (j.contains("split")) {
            const auto s = field(j, "split", where);
            if (s == "extraction") {
                t.split = TaskSplit::extraction;
            } else if (s == "heldout") {
                t.split = TaskSplit::heldout;
            } else {
                throw FormatError(where + ": unknown split \"" + s + "\"");
            }
        }
        out.push_back(std::move(t));
        if (end == text.size()) break;
    }
    return out;
}

std::vector<TaskRecord> load_tasks(const std::filesystem::path& path) {
    return parse_tasks(read_file_text(path), path.string());
}

std::string tasks_to_jsonl(std::span<const TaskRecord> tasks) {
    std::string out;
    for (const auto& t : tasks) {
        nlohmann::ordered_json j;
        j["id"] = t.id;
        j["category"] = t.category;
        j["prompt"] = t.prompt;
        if (t.split) j["split"] = to_string(*t.split);
        out += j.dump() + "\n";
    }
    return out;
}

std::map<std::string, int> category_counts(std::span<const TaskRecord> tasks) {
    std::map<std::string, int> counts;
    for (auto c : kTaskCategories) counts[std::string(c)] = 0;
    for (const auto& t : tasks) ++counts[t.category];
    return counts;
}

void assign_splits(std::vector<TaskRecord>& tasks, int heldout_count, std::uint64_t seed) {
    if (heldout_count < 0 || static_cast<std::size_t>(heldout_count) > tasks.size()) {
        throw InvalidArgument("heldout count " + std::to_string(heldout_count) + " exceeds the " +
                              std::to_string(tasks.size()) + " tasks");
    }
    std::vector<std::size_t> order(tasks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return tasks[a].id < tasks[b].id; });
    // Fisher-Yates with an explicit bounded draw; std::shuffle and the
    // standard distributions differ between library implementations.
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(order[i - 1], order[r % bound]);
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
        tasks[order[k]].split = k < static_cast<std::size_t>(heldout_count) ? TaskSplit::heldout : TaskSplit::extraction;
    }
}

std::vector<TaskRecord> tasks_in(std::span<const TaskRecord> tasks, TaskSplit split) {
    std::vector<TaskRecord> out;
    for (const auto& t : tasks) {
        if (t.split == split) out.push_back(t);
    }
    return out;
}

std::uint64_t tasks_hash(std::span<const TaskRecord> tasks) {
    Fnv1a64 h;
    h.update_u64(tasks.size());
    for (const auto& t : tasks) {
        h.field(t.id).field(t.category).field(t.prompt);
        h.field(t.split ? to_string(*t.split) : "");
    }
    return h.digest();
}

}  // namespace steerkit
