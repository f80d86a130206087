#pragma once

#include <functional>
#include <vector>

#include "hlab/agapo/task.hpp"
#include "hlab/harness/tasks.hpp"
#include "hlab/inference/generate.hpp"
#include "hlab/model/model.hpp"
#include "json.hpp"

namespace hlab::harness {

// Teacher-forced sequence; targets are kIgnoreIndex outside the response.
struct SftExample {
    std::vector<int> input;
    std::vector<int> targets;
};

// Reasoning mode lays out <think> think </think> "\n\n" answer EOS; the opening
// marker is injected at generation time and carries no loss.
SftExample make_sft_example(const agapo::Task& task, const Demonstration& demo, inference::Mode mode,
                            const model::Tokenizer& tok = model::default_tokenizer());

struct SftConfig {
    std::size_t steps = 500;
    double lr = 3e-3;
    std::size_t batch = 8;
    inference::Mode mode = inference::Mode::non_reasoning;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SftConfig& c);
SftConfig sft_config_from_json(const nlohmann::json& j);

Tensor sft_loss(const model::Model& model, const std::vector<const SftExample*>& batch);

// Called after every step with (step, loss); returning false stops training.
using SftHook = std::function<bool(std::size_t, double)>;

// Adam on the mean response cross-entropy of uniformly drawn batches.
// Returns the number of steps run.
std::size_t train_sft(model::Model& model, const std::vector<SftExample>& data, const SftConfig& cfg,
                      const SftHook& hook = {});

}  // namespace hlab::harness
