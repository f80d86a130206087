#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hlab/inference/generate.hpp"
#include "hlab/model/model.hpp"
#include "hlab/model/tokenizer.hpp"
#include "hlab/numcore/rng.hpp"
#include "json.hpp"

namespace hlab::longctx {

// A haystack of filler sentences with one "The secret code for KEY is VALUE."
// needle, followed by the question; the answer is the VALUE token.
struct NiahCase {
    std::size_t length = 0;  // prompt tokens + answer tokens
    double depth = 0.0;
    std::string key;
    std::string value;
    std::vector<int> prompt_ids;
    std::vector<int> answer_ids;
    std::size_t needle_sentence = 0;  // index among all haystack sentences
    std::size_t n_sentences = 0;      // haystack sentences, needle included
};

// Shortest length that fits BOS, the needle, the question and the answer.
std::size_t min_niah_length();

// The needle is sentence round(depth * n_filler) of the haystack. Throws
// ConfigError when the length cannot be filled exactly.
NiahCase make_niah_case(std::size_t length, double depth, RngStream& rng,
                        const model::Tokenizer& tok = model::default_tokenizer());

struct NiahGrid {
    std::vector<std::size_t> lengths;
    std::vector<double> depths;
    std::size_t m = 0;
    // cells[l][d]; nullopt marks a length beyond the model context.
    std::vector<std::vector<std::optional<double>>> cells;

    // Minimum over supported cells; nullopt when none is supported.
    std::optional<double> min() const;
    bool green(double threshold) const;
    // Mean over the supported cells of one length row.
    std::optional<double> row_mean(std::size_t length) const;
    nlohmann::json to_json() const;
};

NiahGrid niah_grid_from_json(const nlohmann::json& j);

// Greedy exact match on the answer tokens, m cases per cell.
NiahGrid eval_niah_grid(const inference::TokenPredictor& predictor, const std::vector<std::size_t>& lengths,
                        const std::vector<double>& depths, std::size_t m, std::uint64_t seed,
                        const model::Tokenizer& tok = model::default_tokenizer());

struct ExtensionStage {
    std::size_t max_len = 0;
    std::size_t steps = 0;
};

struct ExtensionOptions {
    double green_threshold = 0.95;
    std::vector<double> depths = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t m = 20;
    // Extra training rounds allowed per stage before halting.
    std::size_t max_retries = 2;
    // Fraction of each batch drawn at short lengths.
    double mix_fraction = 0.5;
    std::size_t min_len = 22;
    double lr = 3e-3;
    std::size_t batch = 4;
    // Allowed drop of initial-length accuracy after extension.
    double short_slack = 0.02;
    std::uint64_t seed = 0;
};

struct StageReport {
    std::size_t max_len = 0;
    std::size_t steps_run = 0;
    std::size_t attempts = 0;
    NiahGrid grid;
    bool green = false;
    double short_accuracy = 0.0;
};

struct ExtensionReport {
    std::vector<StageReport> stages;
    double baseline_short = 0.0;
    double max_short_regression = 0.0;
    bool short_guard_ok = true;
    bool halted = false;
    std::string reason;

    nlohmann::json to_json() const;
};

// Per-step training hook: (stage index, global step, loss).
using StepHook = std::function<void(std::size_t, std::size_t, double)>;

// Trains stage by stage on NIAH cases, raising the context limit, and gates
// each stage on a green grid over all stage lengths reached so far.
ExtensionReport extension_schedule(model::Model& model, const std::vector<ExtensionStage>& stages,
                                   const ExtensionOptions& opts, const StepHook& hook = {});

// Cross-entropy on the answer token of each case, averaged over the batch.
Tensor niah_loss(const model::Model& model, const std::vector<NiahCase>& batch);

}  // namespace hlab::longctx
