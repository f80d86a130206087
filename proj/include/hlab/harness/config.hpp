#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hlab/agapo/trainer.hpp"
#include "hlab/harness/sft.hpp"
#include "hlab/harness/tasks.hpp"
#include "hlab/inference/sampler.hpp"
#include "hlab/longctx/niah.hpp"
#include "hlab/model/config.hpp"
#include "hlab/preference/preference.hpp"
#include "json.hpp"

namespace hlab::harness {

inline constexpr int kRunConfigVersion = 1;

enum class PipelineStage { sft, agapo, pairs, budget_sweep, niah };
const char* to_string(PipelineStage s);
PipelineStage pipeline_stage_from_string(const std::string& s);

struct TaskSetConfig {
    TaskKind kind = TaskKind::arithmetic;
    std::size_t n_train = 100;
    std::size_t n_eval = 50;
    TaskGenOptions gen;
    // JSON-lines task pools replacing the generated ones when set.
    std::optional<std::string> train_file;
    std::optional<std::string> eval_file;
};

struct AgapoStageConfig {
    agapo::AgapoConfig algo;
    std::size_t steps = 50;
};

struct PairsStageConfig {
    std::size_t n_prompts = 50;
    std::size_t n_per_prompt = 8;
    preference::Stage stage = preference::Stage::stage1;
    preference::ScoreOptions score;
};

struct SweepStageConfig {
    std::vector<std::optional<std::size_t>> budgets = {8, 16, 32, 64};
};

struct NiahStageConfig {
    std::vector<longctx::ExtensionStage> stages = {{128, 500}, {256, 200}, {512, 200}};
    longctx::ExtensionOptions options;
};

// The run seed drives model init, task generation and every stage; seeds
// inside the stage sections are overridden.
struct RunConfig {
    int version = kRunConfigVersion;
    std::uint64_t seed = 0;
    std::string out_dir;  // empty: chosen by the caller
    std::optional<std::string> init_checkpoint;
    model::ModelConfig model;
    // Evaluation sampler, also used for pair construction.
    inference::SamplerConfig sampler;
    std::vector<std::uint64_t> eval_seeds = {1, 2, 3, 4};
    TaskSetConfig tasks;
    std::vector<PipelineStage> stages = {PipelineStage::sft};
    SftConfig sft;
    AgapoStageConfig agapo;
    PairsStageConfig pairs;
    SweepStageConfig budget_sweep;
    NiahStageConfig niah;

    // Checks field ranges, stage ordering and that init_checkpoint exists.
    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Strict: unknown keys and version mismatches are ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace hlab::harness
