#pragma once

#include <optional>
#include <vector>

#include "hlab/agapo/task.hpp"
#include "hlab/inference/generate.hpp"
#include "hlab/inference/sampler.hpp"
#include "json.hpp"

namespace hlab::harness {

struct SweepColumn {
    std::optional<std::size_t> budget;  // nullopt: no budget
    bool supported = true;
    std::optional<double> accuracy;     // nullopt when unsupported
    std::size_t traces = 0;
    std::size_t forced = 0;
    // Forced traces whose injected text is not byte-identical to the hand-off string.
    std::size_t handoff_mismatches = 0;
    std::size_t invalid = 0;
};

struct SweepTable {
    std::vector<SweepColumn> columns;  // in the order the budgets were given
    nlohmann::json to_json() const;
};

SweepTable sweep_table_from_json(const nlohmann::json& j);

struct SweepOptions {
    inference::SamplerConfig sampler;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4};
};

// repeat_eval in reasoning mode at each budget. A budget that cannot fit the
// longest prompt, the budget, the hand-off and the answer cap in the
// predictor context is reported unsupported.
SweepTable budget_sweep(const inference::TokenPredictor& predictor, const model::Tokenizer& tok,
                        const std::vector<agapo::Task>& tasks, const std::vector<std::optional<std::size_t>>& budgets,
                        const SweepOptions& opts);

}  // namespace hlab::harness
