#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hlab/agapo/task.hpp"
#include "hlab/inference/generate.hpp"
#include "hlab/model/model.hpp"
#include "hlab/model/tokenizer.hpp"
#include "hlab/numcore/optim.hpp"
#include "json.hpp"

namespace hlab::agapo {

enum class Algo { agapo, grpo };
const char* to_string(Algo a);
Algo algo_from_string(const std::string& s);

// On-policy rollout sampling: temperature 1, no truncation, no penalty.
inference::SamplerConfig default_rollout_sampler();

struct AgapoConfig {
    Algo algo = Algo::agapo;
    double beta = 1e-3;
    std::size_t group_size = 8;
    std::size_t batch_groups = 8;
    double lr = 0.05;
    double momentum = 0.0;
    // Uniform advantage given to all-incorrect groups; 0 keeps the literal LOO value.
    double all_incorrect_penalty = 0.0;
    double std_eps = 1e-8;
    bool length_normalize = false;
    double clip_eps = 0.2;
    // Gradient-norm clip; 0 disables.
    double grad_clip = 1.0;
    inference::SamplerConfig rollout = default_rollout_sampler();
    inference::Mode mode = inference::Mode::non_reasoning;
    std::optional<std::size_t> budget;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const AgapoConfig& c);
AgapoConfig agapo_config_from_json(const nlohmann::json& j);

// BOS followed by the encoded prompt text.
std::vector<int> encode_prompt(const model::Tokenizer& tok, const Task& task);

struct Rollout {
    std::vector<int> prompt;
    inference::GenerationTrace trace;
    double reward = 0.0;
    std::string diagnostic;
};

// Generates one response and scores the answer segment with verify().
Rollout rollout_once(const inference::TokenPredictor& predictor, const model::Tokenizer& tok, const Task& task,
                     const inference::SamplerConfig& sampler, const inference::GenerateOptions& gen, RngStream& rng);

struct PrefilterReport {
    std::vector<Task> kept;
    std::vector<std::size_t> correct_counts;  // per input task
    std::size_t dropped = 0;
    std::vector<std::string> warnings;
};

// Drops tasks whose n sampled responses are all correct; everything else,
// including all-wrong tasks and tasks whose generation fails, is kept.
PrefilterReport prefilter(const std::vector<Task>& tasks, const inference::TokenPredictor& predictor,
                          const model::Tokenizer& tok, const inference::SamplerConfig& sampler,
                          const inference::GenerateOptions& gen, std::uint64_t seed, std::size_t n = 8);

struct StepMetrics {
    std::size_t step = 0;
    double mean_reward = 0.0;
    double loss = 0.0;
    double kl = 0.0;
    double frac_all_incorrect = 0.0;
    double grad_norm = 0.0;
    std::size_t groups_kept = 0;
    bool skipped = false;

    nlohmann::json to_json() const;
};

// Sampling, asymmetric group dropping, advantages, loss and an SGD update.
// The reference model is frozen; it may be null only when beta is 0.
class Trainer {
   public:
    Trainer(model::Model& policy, const model::Model* ref, std::vector<Task> pool, AgapoConfig cfg,
            const model::Tokenizer& tok = model::default_tokenizer());

    StepMetrics step();
    std::size_t steps_done() const { return step_; }
    const AgapoConfig& config() const { return cfg_; }

   private:
    model::Model& policy_;
    const model::Model* ref_;
    std::vector<Task> pool_;
    AgapoConfig cfg_;
    const model::Tokenizer& tok_;
    std::vector<Tensor> params_;
    Sgd opt_;
    std::size_t step_ = 0;
};

}  // namespace hlab::agapo
