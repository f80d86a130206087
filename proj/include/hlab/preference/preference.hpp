#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hlab/agapo/task.hpp"
#include "hlab/inference/generate.hpp"
#include "json.hpp"

namespace hlab::preference {

enum class Stage { stage1, stage2 };
const char* to_string(Stage s);

// Stage 1 mixes verifiable and conciseness terms; stage 2 mixes preference
// and language consistency. Off-stage weights must be zero.
struct HybridRewardWeights {
    double w_verifiable = 0.0;
    double w_preference = 0.0;
    double w_language = 0.0;
    double w_conciseness = 0.0;
    Stage stage = Stage::stage1;

    static HybridRewardWeights stage1(double verifiable = 1.0, double conciseness = 1.0);
    static HybridRewardWeights stage2(double preference = 1.0, double language = 1.0);
    void validate() const;
};

struct ScoreOptions {
    // Response length at which conciseness reaches 0.
    std::size_t len_max = 64;
    std::string target_language = "en";
};

enum class Script { latin, greek, cyrillic, han };
// Script of a language code ("en", "ru", ...); nullopt when unknown.
std::optional<Script> script_for_language(std::string_view lang);
// Fraction of letters in `text` (UTF-8) written in `script`; 1 when there are none.
double script_fraction(std::string_view text, Script script);

// The parts of a response the scorer looks at.
struct ResponseView {
    std::string full_text;    // everything generated, think segment included
    std::string answer_text;  // answer segment only
    std::size_t length = 0;   // generated tokens
    bool finished = false;
};

ResponseView view_of(const inference::GenerationTrace& trace, const model::Tokenizer& tok);

struct ComponentScores {
    double verifiable = 0.0;
    double conciseness = 0.0;
    double preference = 0.0;
    std::optional<double> language;  // nullopt when the target language is unknown
    double hybrid = 0.0;

    nlohmann::json to_json() const;
};

// Deterministic rubric: answer present (0.5), finished with EOS (0.25), no
// think markup leaking into the answer (0.25).
double preference_rubric(const ResponseView& r);

// Components are computed on the answer segment except conciseness, which
// uses the full response length. Warnings (e.g. unknown language) are
// appended to `warnings` when given.
ComponentScores score_response(const ResponseView& r, const agapo::Task* task, const HybridRewardWeights& w,
                               const ScoreOptions& opts, std::vector<std::string>* warnings = nullptr);

struct PreferencePair {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    Stage stage = Stage::stage1;
    ComponentScores chosen_scores;
    ComponentScores rejected_scores;
    std::size_t chosen_index = 0;
    std::size_t rejected_index = 0;
    // Stage 1 with no incorrect response: (shortest correct, longest correct).
    bool both_correct = false;
    bool reused = false;

    nlohmann::json to_json() const;
};

// Picks chosen/rejected among scored responses to one prompt, or nullopt when
// no strictly ordered pair exists. Ties resolve to the lower index.
std::optional<PreferencePair> select_pair(const std::string& prompt, const std::vector<ResponseView>& responses,
                                          const std::vector<ComponentScores>& scores, Stage stage);

struct BuildOptions {
    std::size_t n_per_prompt = 8;
    HybridRewardWeights weights = HybridRewardWeights::stage1();
    ScoreOptions score;
    inference::SamplerConfig sampler;
    inference::GenerateOptions gen;
    std::uint64_t seed = 0;
};

struct BuildReport {
    std::vector<PreferencePair> pairs;
    std::size_t prompts = 0;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

// Samples n responses per task on-policy, scores them and selects pairs.
BuildReport build_pairs(const inference::TokenPredictor& predictor, const model::Tokenizer& tok,
                        const std::vector<agapo::Task>& tasks, const BuildOptions& opts);

// Appends round(fraction * |stage1|) stage 1 pairs, drawn without replacement
// and marked reused, to the stage 2 pairs.
std::vector<PreferencePair> mix_stage1(std::vector<PreferencePair> stage2, const std::vector<PreferencePair>& stage1,
                                       double fraction, std::uint64_t seed);

void write_pairs_jsonl(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path);

}  // namespace hlab::preference
