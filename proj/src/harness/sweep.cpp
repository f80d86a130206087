#include "hlab/harness/sweep.hpp"

#include <algorithm>

#include "hlab/agapo/trainer.hpp"

namespace hlab::harness {

nlohmann::json SweepTable::to_json() const {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : columns)
        cols.push_back({{"budget", c.budget ? nlohmann::json(*c.budget) : nlohmann::json(nullptr)},
                        {"supported", c.supported},
                        {"accuracy", c.accuracy ? nlohmann::json(*c.accuracy) : nlohmann::json(nullptr)},
                        {"traces", c.traces},
                        {"forced", c.forced},
                        {"handoff_mismatches", c.handoff_mismatches},
                        {"invalid", c.invalid}});
    return {{"columns", cols}};
}

SweepTable sweep_table_from_json(const nlohmann::json& j) {
    SweepTable t;
    try {
        for (const auto& c : j.at("columns")) {
            SweepColumn col;
            if (!c.at("budget").is_null()) col.budget = c["budget"].get<std::size_t>();
            col.supported = c.at("supported").get<bool>();
            if (!c.at("accuracy").is_null()) col.accuracy = c["accuracy"].get<double>();
            col.traces = c.at("traces").get<std::size_t>();
            col.forced = c.at("forced").get<std::size_t>();
            col.handoff_mismatches = c.at("handoff_mismatches").get<std::size_t>();
            col.invalid = c.at("invalid").get<std::size_t>();
            t.columns.push_back(col);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("sweep table: ") + e.what());
    }
    return t;
}

SweepTable budget_sweep(const inference::TokenPredictor& predictor, const model::Tokenizer& tok,
                        const std::vector<agapo::Task>& tasks, const std::vector<std::optional<std::size_t>>& budgets,
                        const SweepOptions& opts) {
    if (tasks.empty()) throw ConfigError("budget_sweep: no tasks");
    if (opts.seeds.empty()) throw ConfigError("budget_sweep: no seeds");
    opts.sampler.validate();
    std::vector<std::vector<int>> prompts;
    std::size_t longest = 0;
    for (const auto& t : tasks) {
        prompts.push_back(agapo::encode_prompt(tok, t));
        longest = std::max(longest, prompts.back().size());
    }
    const auto handoff = tok.encode(inference::handoff_text());
    const std::string& expected = inference::handoff_text();

    SweepTable table;
    for (const auto& budget : budgets) {
        if (budget && *budget == 0) throw ConfigError("budget_sweep: budgets must be >= 1");
        SweepColumn col;
        col.budget = budget;
        // +1 for the opening think marker
        const std::size_t need = longest + 1 + (budget ? *budget + handoff.size() : 0) + opts.sampler.max_new_tokens;
        if (budget && need > predictor.max_context()) {
            col.supported = false;
            table.columns.push_back(col);
            continue;
        }
        inference::GenerateOptions gen;
        gen.mode = inference::Mode::reasoning;
        gen.budget = budget;
        gen.handoff_ids = handoff;
        auto scorer = [&](std::size_t t, const inference::GenerationTrace& tr) {
            ++col.traces;
            if (tr.forced_handoff) {
                ++col.forced;
                if (tok.decode(tr.handoff_ids) != expected) ++col.handoff_mismatches;
            }
            return agapo::verify(tasks[t], tok.decode(tr.answer_ids)).reward;
        };
        const auto rep = inference::repeat_eval(predictor, prompts, opts.sampler, gen, opts.seeds, scorer);
        col.accuracy = rep.mean_accuracy;
        col.invalid = rep.invalid;
        table.columns.push_back(col);
    }
    return table;
}

}  // namespace hlab::harness
