#pragma once

// Reasoning-task records: the JSONL task file, its closed category set, and
// the seeded extraction/heldout split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steerkit {

inline constexpr std::array<std::string_view, 10> kTaskCategories{
    "Mathematical Logic",   "Spatial Reasoning", "Verbal Logic",   "Pattern Recognition",
    "Lateral Thinking",     "Causal Reasoning",  "Probabilistic Thinking", "Systems Thinking",
    "Creative Problem Solving", "Scientific Reasoning",
};

// Index into kTaskCategories, or nullopt.
std::optional<int> task_category_index(std::string_view name);

enum class TaskSplit { extraction, heldout };

std::string_view to_string(TaskSplit split);

struct TaskRecord {
    std::string id;
    std::string category;
    std::string prompt;
    std::optional<TaskSplit> split;

    friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

// One JSON object per line: {"id", "category", "prompt"} plus an optional
// "split" ("extraction" or "heldout"). Blank lines are skipped. Errors name
// the source, the line number and the offending value: unknown category,
// duplicate id, malformed JSON, missing or empty fields, bad id characters.
std::vector<TaskRecord> parse_tasks(std::string_view text, std::string_view source = "tasks");
std::vector<TaskRecord> load_tasks(const std::filesystem::path& path);

std::string tasks_to_jsonl(std::span<const TaskRecord> tasks);

// Count per category, every category of kTaskCategories present (possibly 0).
std::map<std::string, int> category_counts(std::span<const TaskRecord> tasks);

// Puts `heldout_count` tasks in the heldout split and the rest in
// extraction. The choice is a seeded shuffle of the id-sorted tasks, so it
// depends only on the id set and the seed. Throws InvalidArgument when
// heldout_count exceeds the task count.
void assign_splits(std::vector<TaskRecord>& tasks, int heldout_count, std::uint64_t seed);

std::vector<TaskRecord> tasks_in(std::span<const TaskRecord> tasks, TaskSplit split);

std::uint64_t tasks_hash(std::span<const TaskRecord> tasks);

}  // namespace steerkit
