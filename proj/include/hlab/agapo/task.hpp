#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace hlab::agapo {

enum class Category { math, code, science, instruction_following };

const char* to_string(Category c);
Category category_from_string(const std::string& s);

// verifier_spec by category:
//   math                  {"answer": "19"}
//   code                  {"tests": [{"x": 3, "expected": 7}, ...]}
//   science               {"choice": "B"}
//   instruction_following {"constraints": [{"type": "word_count", "n": 3}, ...]}
struct Task {
    std::string id;
    std::string prompt;
    Category category = Category::math;
    nlohmann::json verifier_spec;
};

// Checks that verifier_spec is well-formed for the category.
void validate_task(const Task& t);

nlohmann::json to_json(const Task& t);
Task task_from_json(const nlohmann::json& j);
std::vector<Task> read_tasks_jsonl(const std::filesystem::path& path);
void write_tasks_jsonl(const std::vector<Task>& tasks, const std::filesystem::path& path);

struct VerifyOptions {
    // Code tasks: reward the fraction of passing tests instead of all-or-nothing.
    bool partial_credit = false;
};

struct VerifyResult {
    double reward = 0.0;
    std::string diagnostic;  // empty on a clean check
};

// Pure rule-based check of a response (answer text) against the task.
VerifyResult verify(const Task& task, std::string_view response, const VerifyOptions& opts = {});

// Text after the last "answer:" marker (case-insensitive), up to the end of
// that line; the whole trimmed response when no marker is present.
std::string extract_answer(std::string_view response);

// Body of the last ``` fenced block, language tag line excluded.
// Returns false when no complete block exists.
bool extract_final_code_block(std::string_view response, std::string& body);

// Toy code language: integer expressions over x with + - * and parentheses.
// Throws InputError on syntax errors or overflow.
std::int64_t eval_toy_expr(std::string_view src, std::int64_t x);

}  // namespace hlab::agapo
